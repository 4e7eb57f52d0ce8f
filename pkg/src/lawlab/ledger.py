"""Ingestion of training-run checkpoint records and data-collection policies.

One :class:`RunRecord` is one evaluated checkpoint of one training run. A
:class:`Dataset` is an immutable, ordered collection of records; every filter
is a pure function returning a new Dataset, so filtered views can be composed
and shared freely across threads.

Learning rates keep their ingested decimal string alongside the float value:
sweeps use a handful of discrete points, so the ``fixed`` learning-rate filter
compares the stored strings exactly instead of applying a float tolerance.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, replace
from typing import Iterable, TextIO

from .errors import ParseError, SchemaError

logger = logging.getLogger(__name__)

CSV_COLUMNS = [
    "run_id",
    "n_total",
    "n_nonembed",
    "tokens_seen",
    "step",
    "total_steps",
    "peak_lr",
    "loss",
    "source",
]
OPTIONAL_COLUMNS = ["arch_id"]

CHECKPOINT_POLICIES = ("final_only", "all", "min_fraction")
LR_POLICIES = ("all", "fixed", "sweep_optimal")
N_CONVENTIONS = ("total", "nonembed")


@dataclass(frozen=True)
class RunRecord:
    """One evaluated checkpoint: sizes, token budget, learning rate and loss.

    ``peak_lr_raw`` / ``loss_raw`` hold the exact decimal text as ingested so
    that serialization round-trips and string-exact LR matching both work.
    They default to ``str()`` of the float value when constructed directly.
    """

    run_id: str
    n_total: int
    tokens_seen: int
    step: int
    peak_lr: float
    loss: float
    source: str
    n_nonembed: int | None = None
    total_steps: int | None = None
    arch_id: str | None = None
    peak_lr_raw: str = ""
    loss_raw: str = ""

    def __post_init__(self):
        if not self.run_id:
            raise ValueError("run_id must be non-empty")
        if self.n_total <= 0:
            raise ValueError("n_total must be positive")
        if self.n_nonembed is not None:
            if self.n_nonembed <= 0:
                raise ValueError("n_nonembed must be positive")
            if self.n_total < self.n_nonembed:
                raise ValueError("n_total must be >= n_nonembed")
        if self.tokens_seen <= 0:
            raise ValueError("tokens_seen must be positive")
        if self.step < 1:
            raise ValueError("step must be >= 1")
        if self.total_steps is not None and not (1 <= self.step <= self.total_steps):
            raise ValueError("step must satisfy 1 <= step <= total_steps")
        if not self.loss > 0:
            raise ValueError("loss must be positive")
        if not self.peak_lr_raw:
            object.__setattr__(self, "peak_lr_raw", str(self.peak_lr))
        if not self.loss_raw:
            object.__setattr__(self, "loss_raw", str(self.loss))

    @property
    def is_final(self) -> bool:
        return self.total_steps is not None and self.step == self.total_steps

    def n(self, convention: str) -> int:
        """Parameter count under the given convention ('total' or 'nonembed')."""
        if convention == "total":
            return self.n_total
        if convention == "nonembed":
            if self.n_nonembed is None:
                from .errors import MissingNonembedCount

                raise MissingNonembedCount(
                    f"record ({self.run_id}, step {self.step}) has no n_nonembed"
                )
            return self.n_nonembed
        raise ValueError(f"unknown N convention: {convention!r}")

    def dn_ratio(self, convention: str = "total") -> float:
        return self.tokens_seen / self.n(convention)


@dataclass(frozen=True)
class Dataset:
    """Ordered, immutable collection of run records.

    The label accumulates human-readable descriptions of every filter applied,
    giving each derived dataset a provenance trail.
    """

    records: tuple[RunRecord, ...]
    label: str = ""
    arch_column: bool = False

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        seen = set()
        for r in self.records:
            key = (r.run_id, r.step)
            if key in seen:
                raise ValueError(f"duplicate (run_id, step) in dataset: {key}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def derive(self, records: Iterable[RunRecord], description: str) -> "Dataset":
        label = f"{self.label} | {description}" if self.label else description
        return replace(self, records=tuple(records), label=label)


@dataclass(frozen=True)
class FilterSpec:
    """Declarative bundle of the three data-collection policies.

    checkpoint_policy: 'final_only', 'all', or 'min_fraction' (with
        ``checkpoint_fraction`` in [0, 1]).
    lr_policy: 'all', 'fixed' (with ``fixed_lr`` as the exact decimal string),
        or 'sweep_optimal' (argmin loss per (n_total, tokens_seen, step) group).
    max_n / dn_min / dn_max: inclusive size and tokens-per-parameter bounds,
        read under ``n_convention``.
    """

    checkpoint_policy: str = "all"
    checkpoint_fraction: float | None = None
    lr_policy: str = "all"
    fixed_lr: str | None = None
    max_n: int | None = None
    dn_min: float | None = None
    dn_max: float | None = None
    n_convention: str = "total"

    def __post_init__(self):
        if self.checkpoint_policy not in CHECKPOINT_POLICIES:
            raise ValueError(f"unknown checkpoint policy: {self.checkpoint_policy!r}")
        if self.checkpoint_policy == "min_fraction":
            if self.checkpoint_fraction is None or not (0.0 <= self.checkpoint_fraction <= 1.0):
                raise ValueError("min_fraction requires checkpoint_fraction in [0, 1]")
        if self.lr_policy not in LR_POLICIES:
            raise ValueError(f"unknown lr policy: {self.lr_policy!r}")
        if self.lr_policy == "fixed" and not self.fixed_lr:
            raise ValueError("fixed lr policy requires fixed_lr")
        if self.dn_min is not None and self.dn_max is not None and not self.dn_min < self.dn_max:
            raise ValueError("dn_min must be < dn_max")
        if self.n_convention not in N_CONVENTIONS:
            raise ValueError(f"unknown N convention: {self.n_convention!r}")


# ---------------------------------------------------------------------------
# Ingestion / serialization
# ---------------------------------------------------------------------------


def _require_positive_int(value: str, name: str) -> int:
    try:
        parsed = int(value)
    except ValueError:
        raise ValueError(f"{name} must be an integer, got {value!r}")
    return parsed


def _record_from_fields(fields: dict[str, str]) -> RunRecord:
    """Build a RunRecord from string-valued fields, raising ValueError on bad data."""
    n_nonembed = fields.get("n_nonembed", "")
    total_steps = fields.get("total_steps", "")
    arch_id = fields.get("arch_id", "")
    loss_raw = fields["loss"]
    peak_lr_raw = fields["peak_lr"]
    try:
        loss = float(loss_raw)
        peak_lr = float(peak_lr_raw)
    except ValueError as exc:
        raise ValueError(str(exc))
    if not loss > 0:
        raise ValueError("loss must be positive")
    return RunRecord(
        run_id=fields["run_id"],
        n_total=_require_positive_int(fields["n_total"], "n_total"),
        n_nonembed=_require_positive_int(n_nonembed, "n_nonembed") if n_nonembed else None,
        tokens_seen=_require_positive_int(fields["tokens_seen"], "tokens_seen"),
        step=_require_positive_int(fields["step"], "step"),
        total_steps=_require_positive_int(total_steps, "total_steps") if total_steps else None,
        peak_lr=peak_lr,
        loss=loss,
        source=fields["source"],
        arch_id=arch_id or None,
        peak_lr_raw=peak_lr_raw,
        loss_raw=loss_raw,
    )


def ingest(stream: TextIO | str, format: str = "csv", label: str = "") -> Dataset:
    """Parse a character stream of run records into a Dataset.

    CSV requires the header ``run_id,n_total,n_nonembed,tokens_seen,step,
    total_steps,peak_lr,loss,source[,arch_id]``; JSON expects an array of
    objects with the same field names. Rows violating record invariants raise
    :class:`ParseError` with their row number; a missing column raises
    :class:`SchemaError`. Empty valid input yields an empty Dataset.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    if format == "csv":
        return _ingest_csv(stream, label)
    if format == "json":
        return _ingest_json(stream, label)
    raise ValueError(f"unknown format: {format!r}")


def _ingest_csv(stream: TextIO, label: str) -> Dataset:
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("empty input: missing CSV header")
    header = [h.strip() for h in header]
    missing = [c for c in CSV_COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"missing required columns: {', '.join(missing)}")
    unknown = [c for c in header if c not in CSV_COLUMNS + OPTIONAL_COLUMNS]
    if unknown:
        raise SchemaError(f"unknown columns: {', '.join(unknown)}")

    records = []
    for row_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(row_no, f"expected {len(header)} fields, got {len(row)}")
        fields = dict(zip(header, row))
        try:
            records.append(_record_from_fields(fields))
        except ValueError as exc:
            raise ParseError(row_no, str(exc))
    try:
        return Dataset(tuple(records), label=label, arch_column="arch_id" in header)
    except ValueError as exc:
        raise ParseError(0, str(exc))


def _ingest_json(stream: TextIO, label: str) -> Dataset:
    # parse_float=str keeps the exact decimal text for peak_lr/loss.
    try:
        data = json.load(stream, parse_float=str)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}")
    if not isinstance(data, list):
        raise SchemaError("JSON input must be an array of record objects")
    records = []
    any_arch = False
    for idx, obj in enumerate(data, start=1):
        if not isinstance(obj, dict):
            raise ParseError(idx, "record must be an object")
        missing = [c for c in CSV_COLUMNS if c not in obj]
        if missing:
            raise ParseError(idx, f"missing fields: {', '.join(missing)}")
        fields = {k: ("" if v is None else str(v)) for k, v in obj.items()}
        any_arch = any_arch or bool(fields.get("arch_id"))
        try:
            records.append(_record_from_fields(fields))
        except ValueError as exc:
            raise ParseError(idx, str(exc))
    try:
        return Dataset(tuple(records), label=label, arch_column=any_arch)
    except ValueError as exc:
        raise ParseError(0, str(exc))


def to_csv(ds: Dataset) -> str:
    """Serialize a Dataset back to CSV, bit-exact for CSV-ingested data."""
    with_arch = ds.arch_column or any(r.arch_id for r in ds.records)
    header = CSV_COLUMNS + (["arch_id"] if with_arch else [])
    lines = [",".join(header)]
    for r in ds.records:
        row = [
            r.run_id,
            str(r.n_total),
            "" if r.n_nonembed is None else str(r.n_nonembed),
            str(r.tokens_seen),
            str(r.step),
            "" if r.total_steps is None else str(r.total_steps),
            r.peak_lr_raw,
            r.loss_raw,
            r.source,
        ]
        if with_arch:
            row.append(r.arch_id or "")
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Filters
# ---------------------------------------------------------------------------


def filter_checkpoints(ds: Dataset, policy: str, fraction: float | None = None) -> Dataset:
    """Select checkpoints by training progress.

    'final_only' keeps step == total_steps; 'all' keeps everything;
    'min_fraction' keeps step/total_steps >= fraction. Records lacking
    total_steps cannot satisfy a progress predicate; they are dropped and
    counted in a logged warning tally.
    """
    if policy == "all":
        return ds.derive(ds.records, "checkpoints:all")
    if policy == "final_only":
        kept = [r for r in ds.records if r.is_final]
        dropped = sum(1 for r in ds.records if r.total_steps is None)
        if dropped:
            logger.warning("final_only dropped %d records lacking total_steps", dropped)
        return ds.derive(kept, "checkpoints:final_only")
    if policy == "min_fraction":
        if fraction is None or not (0.0 <= fraction <= 1.0):
            raise ValueError("min_fraction requires fraction in [0, 1]")
        kept = [
            r
            for r in ds.records
            if r.total_steps is not None and r.step / r.total_steps >= fraction
        ]
        dropped = sum(1 for r in ds.records if r.total_steps is None)
        if dropped:
            logger.warning("min_fraction dropped %d records lacking total_steps", dropped)
        return ds.derive(kept, f"checkpoints:min_fraction({fraction:g})")
    raise ValueError(f"unknown checkpoint policy: {policy!r}")


def filter_lr(ds: Dataset, policy: str, lr: str | float | None = None) -> Dataset:
    """Select records by learning-rate policy.

    'all' is the identity; 'fixed' keeps records whose ingested decimal
    string equals ``lr`` exactly; 'sweep_optimal' keeps, per
    (n_total, tokens_seen, step) group, the record with minimum loss,
    breaking ties by lower peak_lr.
    """
    if policy == "all":
        return ds.derive(ds.records, "lr:all")
    if policy == "fixed":
        if lr is None:
            raise ValueError("fixed lr policy requires a learning rate")
        lr_str = lr if isinstance(lr, str) else str(lr)
        kept = [r for r in ds.records if r.peak_lr_raw == lr_str]
        return ds.derive(kept, f"lr:fixed({lr_str})")
    if policy == "sweep_optimal":
        best: dict[tuple[int, int, int], tuple[float, float, int]] = {}
        for idx, r in enumerate(ds.records):
            key = (r.n_total, r.tokens_seen, r.step)
            cand = (r.loss, r.peak_lr, idx)
            if key not in best or cand[:2] < best[key][:2]:
                best[key] = cand
        keep = {entry[2] for entry in best.values()}
        kept = [r for idx, r in enumerate(ds.records) if idx in keep]
        return ds.derive(kept, "lr:sweep_optimal")
    raise ValueError(f"unknown lr policy: {policy!r}")


def filter_scale(
    ds: Dataset,
    max_n: int | None = None,
    dn_min: float | None = None,
    dn_max: float | None = None,
    n_convention: str = "total",
) -> Dataset:
    """Keep records with N <= max_n and dn_min <= D/N <= dn_max (bounds inclusive)."""
    kept = []
    for r in ds.records:
        n = r.n(n_convention)
        if max_n is not None and n > max_n:
            continue
        dn = r.tokens_seen / n
        if dn_min is not None and dn < dn_min:
            continue
        if dn_max is not None and dn > dn_max:
            continue
        kept.append(r)
    parts = []
    if max_n is not None:
        parts.append(f"max_n={max_n:g}")
    if dn_min is not None:
        parts.append(f"dn_min={dn_min:g}")
    if dn_max is not None:
        parts.append(f"dn_max={dn_max:g}")
    desc = "scale:" + (",".join(parts) if parts else "none") + f",n={n_convention}"
    return ds.derive(kept, desc)


@dataclass(frozen=True)
class FilterStage:
    """Provenance entry: one filter application with before/after counts."""

    description: str
    count_before: int
    count_after: int


def apply_filters(ds: Dataset, spec: FilterSpec) -> tuple[Dataset, list[FilterStage]]:
    """Apply a FilterSpec stage by stage, recording before/after counts."""
    stages: list[FilterStage] = []

    def run(stage_ds: Dataset, fn) -> Dataset:
        before = len(stage_ds)
        out = fn(stage_ds)
        stages.append(FilterStage(out.label.rsplit(" | ", 1)[-1], before, len(out)))
        return out

    out = run(ds, lambda d: filter_checkpoints(d, spec.checkpoint_policy, spec.checkpoint_fraction))
    out = run(out, lambda d: filter_lr(d, spec.lr_policy, spec.fixed_lr))
    out = run(
        out,
        lambda d: filter_scale(d, spec.max_n, spec.dn_min, spec.dn_max, spec.n_convention),
    )
    return out, stages

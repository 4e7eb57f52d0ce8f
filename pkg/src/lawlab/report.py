"""End-to-end experiment pipeline and report generation.

``run_experiment`` drives ingest -> filter -> annotate -> fit (and optionally
the isoFLOP route) -> validate, and returns a JSON-serializable report that
embeds the fully resolved config (with its hash), dataset provenance counts
for every filter stage, the multistart summary, fitted parameters, a derived
allocation table at the configured reference budgets, validation diagnostics
and methodology notes. Everything except the timing block is a pure function
of (config, data), so reports are byte-reproducible.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

from .config import ExperimentConfig, MatrixConfig
from .counting import load_arch_table, annotate_compute
from .errors import LawLabError
from .fitters import MultistartReport, bootstrap_fit, fit
from .forms import dict_to_vector, optimal_allocation, ratio_predict, vector_to_params
from .isoflop import PIPELINE_NOTES, isoflop_pipeline
from .ledger import apply_filters, ingest
from .objectives import FitProblem
from .validation import goodness_of_fit, validate_extrapolation

SCHEMA_VERSION = 1

KAPLAN_ORIENTATION_NOTE = (
    "kaplan form is evaluated in the decreasing orientation "
    "[(N_c/N)^(alpha_n/alpha_d) + D_c/D]^alpha_d so loss falls with scale; "
    "the increasing orientation sometimes printed elsewhere is not reproduced"
)
GRID_AXES_NOTE = (
    "default initialization grid assigns the 6-point axes to (log_a, log_b) "
    "and 5-point axes to (log_e, alpha, beta); axis ranges are this package's "
    "own defaults and are config-overridable"
)
OBJECTIVE_CONVENTIONS_NOTE = (
    "objective values are means over records; mse carries no 1/2 factor while "
    "huber kinds keep 0.5 in the quadratic branch, so values are comparable "
    "only within one objective kind"
)


def _json_safe(value):
    """Replace non-finite floats with None so reports stay valid JSON."""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def serialize_report(report: dict) -> str:
    return json.dumps(_json_safe(report), sort_keys=True, indent=2) + "\n"


def save_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(serialize_report(report), encoding="utf-8")


def load_report(path: str | Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def strip_timing(report: dict) -> dict:
    out = dict(report)
    out.pop("timing", None)
    return out


def _fit_summary(report: MultistartReport) -> dict:
    objectives = [r.objective for r in report.all_results]
    out = {
        "best": report.best.to_dict(),
        "best_index": report.best_index,
        "n_starts": len(report.all_results),
        "n_converged": sum(1 for r in report.all_results if r.converged),
        "objective_min": min(objectives),
        "objective_max": max(objectives),
        "strategy": report.strategy.to_dict(),
        "optimizer": report.optimizer.to_dict(),
    }
    if len(report.all_results) <= 256:
        out["starts"] = [
            [r.init_index, r.objective, r.converged, r.iterations, r.termination_reason]
            for r in report.all_results
        ]
    return out


def _natural_params(form: str, params: dict) -> dict | None:
    try:
        obj = vector_to_params(form, dict_to_vector(form, params))
    except ValueError:
        return None
    if form in ("chinchilla", "tied"):
        return {
            "e": obj.e,
            "a": obj.a,
            "b": obj.b,
            "alpha": obj.alpha,
            "beta": obj.beta,
        }
    if form == "kaplan":
        return {
            "n_c": obj.n_c,
            "d_c": obj.d_c,
            "alpha_n": obj.alpha_n,
            "alpha_d": obj.alpha_d,
        }
    return None


def _allocation_table(form: str, params: dict, reference_points, flop_constant: float):
    """Closed-form allocations at each reference budget (additive forms only)."""
    if form not in ("chinchilla", "tied"):
        return None
    try:
        obj = vector_to_params(form, dict_to_vector(form, params))
    except ValueError:
        return None
    table = []
    for ref in reference_points:
        n_opt, d_opt, rho = optimal_allocation(obj, ref["c"], flop_constant)
        entry = {"label": ref["label"], "c": ref["c"], "n_opt": n_opt, "d_opt": d_opt, "rho": rho}
        if ref.get("n") is not None:
            entry["reference_n"] = ref["n"]
        if ref.get("d") is not None:
            entry["reference_d"] = ref["d"]
        table.append(entry)
    return table


def run_experiment(
    config: ExperimentConfig, data_path: str | None = None, threads: int = 1
) -> dict:
    """Execute the full pipeline for one config and return the report dict."""
    started = time.monotonic()
    started_utc = datetime.now(timezone.utc).isoformat()

    source = config.data_path(data_path)
    with open(source, "r", encoding="utf-8") as fh:
        ds = ingest(fh, config.raw["data"]["format"], label=source.name)
    n_ingested = len(ds)

    filtered, stages = apply_filters(ds, config.filter_spec())

    arch_table = None
    table_path = config.arch_table_path()
    if table_path is not None:
        with open(table_path, "r", encoding="utf-8") as fh:
            arch_table = load_arch_table(fh)
    annotated = annotate_compute(filtered, config.counting_policy(), arch_table)

    form = config.form
    problem = FitProblem.from_annotated(annotated, form, config.objective_spec())
    strategy = config.init_strategy()
    optimizer = config.optimizer_spec()
    multistart = fit(problem, strategy, optimizer, threads=threads)
    best = multistart.best

    notes = [OBJECTIVE_CONVENTIONS_NOTE]
    if strategy.kind != "fixed" and form in ("chinchilla", "tied"):
        notes.append(GRID_AXES_NOTE)
    if form == "kaplan":
        notes.append(KAPLAN_ORIENTATION_NOTE)

    reference_points = config.raw["report"]["reference_points"]
    allocation = _allocation_table(form, best.params, reference_points, config.flop_constant)
    if form == "kaplan" and reference_points:
        notes.append("no closed-form allocation is emitted for the kaplan family")

    iso_block = None
    if config.raw["isoflop"]["enabled"]:
        budgets, auto_count = config.isoflop_budgets()
        iso = isoflop_pipeline(annotated, budgets, auto_count)
        iso_block = iso.to_dict()
        if iso.ratio is not None and reference_points:
            iso_block["allocation"] = [
                dict(
                    zip(
                        ("label", "c", "n_star", "d_star", "rho_star"),
                        (ref["label"], ref["c"])
                        + ratio_predict(iso.ratio.params, ref["c"], config.flop_constant),
                    )
                )
                for ref in reference_points
            ]
        notes.extend(PIPELINE_NOTES)

    validation_block: dict = {}
    if len(problem) >= 2:
        validation_block["goodness"] = goodness_of_fit(problem, best.vector).to_dict()
    split_c = config.raw["validation"]["split_c"]
    if split_c is not None:
        extrap = validate_extrapolation(
            annotated, split_c, form, config.objective_spec(), strategy, optimizer, threads
        )
        validation_block["extrapolation"] = extrap.to_dict()
    boot_cfg = config.raw["validation"]["bootstrap"]
    if boot_cfg is not None:
        boot = bootstrap_fit(
            problem, strategy, optimizer, b=boot_cfg["b"], seed=boot_cfg["seed"]
        )
        validation_block["bootstrap"] = boot.to_dict()

    report = {
        "schema_version": SCHEMA_VERSION,
        "config": config.raw,
        "config_sha256": config.sha256(),
        "dataset": {
            "source_path": str(source),
            "label": annotated.label,
            "n_ingested": n_ingested,
            "n_fitted": len(problem),
            "filters": [
                {"description": s.description, "before": s.count_before, "after": s.count_after}
                for s in stages
            ],
            "n_runs": len({a.record.run_id for a in annotated.records}),
            "n_param_range": [
                min(a.n_effective for a in annotated.records),
                max(a.n_effective for a in annotated.records),
            ],
            "d_token_range": [
                min(float(a.record.tokens_seen) for a in annotated.records),
                max(float(a.record.tokens_seen) for a in annotated.records),
            ],
            "c_range": [
                min(a.c_effective for a in annotated.records),
                max(a.c_effective for a in annotated.records),
            ],
        },
        "fit": _fit_summary(multistart),
        "params": best.params,
        "natural_params": _natural_params(form, best.params),
        "allocation": allocation,
        "isoflop": iso_block,
        "validation": validation_block,
        "notes": notes,
        "timing": {
            "started_utc": started_utc,
            "elapsed_seconds": time.monotonic() - started,
        },
    }
    return report


# ---------------------------------------------------------------------------
# Variant matrix
# ---------------------------------------------------------------------------


def run_matrix(
    matrix: MatrixConfig,
    out_dir: str | Path,
    data_path: str | None = None,
    threads: int = 1,
) -> dict:
    """Run every variant, write per-variant reports and a comparison table.

    Per-variant failures are recorded and do not stop the run. Variants may
    execute concurrently; the comparison table is assembled in declared
    order, so scheduling cannot change any output.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def run_one(item):
        name, _ = item
        try:
            cfg = matrix.variant_config(name)
            report = run_experiment(cfg, data_path=data_path, threads=1)
            save_report(report, out_dir / f"report-{name}.json")
            return name, report, None
        except (LawLabError, OSError, ValueError) as exc:
            return name, None, f"{type(exc).__name__}: {exc}"

    if threads > 1 and len(matrix.variants) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run_one, matrix.variants))
    else:
        outcomes = [run_one(item) for item in matrix.variants]

    reference_points = matrix.base.raw["report"]["reference_points"]
    rows, failures = [], []
    best_objective = None
    for name, report, error in outcomes:
        if error is not None:
            failures.append({"variant": name, "error": error})
            continue
        obj = report["fit"]["best"]["objective"]
        if best_objective is None or obj < best_objective:
            best_objective = obj
        rows.append((name, report))

    table = []
    for name, report in rows:
        natural = report.get("natural_params") or {}
        alpha = natural.get("alpha", natural.get("alpha_n"))
        beta = natural.get("beta", natural.get("alpha_d"))
        exponent = None
        if natural.get("alpha") is not None and natural.get("beta") is not None:
            exponent = natural["beta"] / (natural["alpha"] + natural["beta"])
        row = {
            "variant": name,
            "objective": report["fit"]["best"]["objective"],
            "alpha": alpha,
            "beta": beta,
            "allocation_exponent": exponent,
            "converged": report["fit"]["best"]["converged"],
            "lowest_objective": report["fit"]["best"]["objective"] == best_objective,
        }
        allocation = {e["label"]: e for e in (report.get("allocation") or [])}
        for ref in reference_points:
            entry = allocation.get(ref["label"])
            row[f"n_opt@{ref['label']}"] = entry["n_opt"] if entry else None
        table.append(row)

    csv_text = comparison_csv(table, reference_points)
    (out_dir / "comparison.csv").write_text(csv_text, encoding="utf-8")
    summary = {"variants": table, "failures": failures}
    (out_dir / "comparison.json").write_text(
        json.dumps(_json_safe(summary), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return summary


def comparison_csv(table: list[dict], reference_points) -> str:
    columns = [
        "variant",
        "objective",
        "alpha",
        "beta",
        "allocation_exponent",
    ]
    columns += [f"n_opt@{ref['label']}" for ref in reference_points]
    columns += ["converged", "lowest_objective"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in table:
        writer.writerow([_csv_cell(row.get(col)) for col in columns])
    return buf.getvalue()


def _csv_cell(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(float(value))  # numpy scalars repr differently
    return value

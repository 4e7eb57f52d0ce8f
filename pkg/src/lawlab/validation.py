"""Goodness-of-fit and extrapolation diagnostics.

Diagnostics are always computed on log-loss residuals, whatever space the
fitting objective used: the whole point of comparing objective variants is a
common yardstick afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .counting import ComputeAnnotatedDataset
from .errors import EmptySplit
from .fitters import InitStrategy, MultistartReport, OptimizerSpec, fit
from .forms import _coerce_vector, _log_predict
from .objectives import FitProblem, ObjectiveSpec


@dataclass(frozen=True)
class GoodnessOfFit:
    r2_log: float
    rmse_log: float
    residual_min: float
    residual_median: float
    residual_max: float
    worst_record_id: str

    def to_dict(self) -> dict:
        return {
            "r2_log": self.r2_log,
            "rmse_log": self.rmse_log,
            "residuals": {
                "min": self.residual_min,
                "median": self.residual_median,
                "max": self.residual_max,
                "worst_record_id": self.worst_record_id,
            },
        }


def goodness_of_fit(problem: FitProblem, params) -> GoodnessOfFit:
    """R^2 and RMSE on ln-loss residuals, plus a residual summary."""
    if len(problem) < 2:
        raise ValueError("goodness of fit needs at least 2 records")
    vec = _coerce_vector(problem.form, params)
    log_pred = _log_predict(problem.form, vec, problem._ln_n, problem._ln_d)
    resid = log_pred - problem._ln_loss
    ss_res = float(resid @ resid)
    centered = problem._ln_loss - problem._ln_loss.mean()
    ss_tot = float(centered @ centered)
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res == 0.0 else float("-inf")
    else:
        r2 = 1.0 - ss_res / ss_tot
    worst = int(np.argmax(np.abs(resid)))
    return GoodnessOfFit(
        r2_log=r2,
        rmse_log=float(np.sqrt(ss_res / len(resid))),
        residual_min=float(resid.min()),
        residual_median=float(np.median(resid)),
        residual_max=float(resid.max()),
        worst_record_id=problem.record_ids[worst],
    )


@dataclass(frozen=True)
class HoldoutEntry:
    record_id: str
    n: float
    d: float
    c: float
    observed: float
    predicted: float
    log_error: float  # |ln predicted - ln observed|


@dataclass(frozen=True)
class ExtrapolationReport:
    split_c: float
    n_fit_records: int
    n_holdout_records: int
    fit_report: MultistartReport
    holdout: tuple[HoldoutEntry, ...]
    max_log_error: float

    def to_dict(self) -> dict:
        return {
            "split_c": self.split_c,
            "n_fit_records": self.n_fit_records,
            "n_holdout_records": self.n_holdout_records,
            "best_params": self.fit_report.best.params,
            "max_log_error": self.max_log_error,
            "holdout": [
                {
                    "record_id": h.record_id,
                    "n": h.n,
                    "d": h.d,
                    "c": h.c,
                    "observed": h.observed,
                    "predicted": h.predicted,
                    "log_error": h.log_error,
                }
                for h in self.holdout
            ],
        }


def validate_extrapolation(
    ds: ComputeAnnotatedDataset,
    split_c: float,
    form: str,
    objective: ObjectiveSpec,
    strategy: InitStrategy,
    optimizer: OptimizerSpec,
    threads: int = 1,
) -> ExtrapolationReport:
    """Fit below a compute split, predict the held-out high-compute records.

    The fit side keeps every record with c_effective <= split_c; the holdout
    side keeps final checkpoints with c_effective > split_c. Either side
    being empty raises EmptySplit.
    """
    fit_side = [a for a in ds.records if a.c_effective <= split_c]
    holdout_side = [
        a for a in ds.records if a.c_effective > split_c and a.record.is_final
    ]
    if not fit_side:
        raise EmptySplit(f"no records at or below split_c = {split_c:g}")
    if not holdout_side:
        raise EmptySplit(f"no final-checkpoint records above split_c = {split_c:g}")

    fit_ds = ComputeAnnotatedDataset(tuple(fit_side), ds.policy, ds.label + " | split:fit")
    problem = FitProblem.from_annotated(fit_ds, form, objective)
    report = fit(problem, strategy, optimizer, threads=threads)
    vec = report.best.vector

    entries = []
    for a in sorted(holdout_side, key=lambda a: (a.record.run_id, a.record.step)):
        ln_pred = float(
            _log_predict(
                form,
                vec,
                np.array([np.log(a.n_effective)]),
                np.array([np.log(float(a.record.tokens_seen))]),
            )[0]
        )
        observed = a.record.loss
        entries.append(
            HoldoutEntry(
                record_id=f"{a.record.run_id}@{a.record.step}",
                n=a.n_effective,
                d=float(a.record.tokens_seen),
                c=a.c_effective,
                observed=observed,
                predicted=float(np.exp(ln_pred)),
                log_error=abs(ln_pred - float(np.log(observed))),
            )
        )
    return ExtrapolationReport(
        split_c=float(split_c),
        n_fit_records=len(fit_side),
        n_holdout_records=len(holdout_side),
        fit_report=report,
        holdout=tuple(entries),
        max_log_error=max(h.log_error for h in entries),
    )

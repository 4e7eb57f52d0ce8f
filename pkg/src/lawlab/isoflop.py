"""The isoFLOP / ratio-optimization pipeline.

Instead of fitting a full loss surface, this route answers "what model size
is best at each compute budget" directly: interpolate each run's loss-compute
curve to a set of budgets, fit a parabola in log model size per budget to
locate the loss minimum, then regress the resulting optimal sizes on compute
to get the two-coefficient ratio law.

All interpolation/fitting conventions here are this package's own choices
(log-log linear interpolation, unweighted quadratic in ln n, budgets with a
non-interior vertex dropped rather than clamped) and are surfaced as notes in
every report that uses the pipeline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .counting import ComputeAnnotatedDataset
from .errors import Degenerate, NoInteriorMinimum, OutOfRange
from .forms import RatioParams

logger = logging.getLogger(__name__)

PIPELINE_NOTES = (
    "isoflop: per-run curves interpolated piecewise-linearly in (ln C, ln loss)",
    "isoflop: per-budget profiles fit by unweighted least-squares quadratics in ln N",
    "isoflop: budgets whose parabola vertex is not interior to the point hull are dropped",
)


def interpolate_at_flops(run_curve: Sequence[tuple[float, float]], target_c: float) -> float:
    """Loss of one run at ``target_c``, interpolated between checkpoints.

    The curve must have >= 2 points with strictly increasing compute;
    interpolation is piecewise-linear in (ln c, ln loss), exact at the knots,
    and never extrapolates (targets outside the hull raise OutOfRange).
    """
    if len(run_curve) < 2:
        raise ValueError("interpolation needs at least 2 checkpoints")
    c = np.array([p[0] for p in run_curve], dtype=float)
    loss = np.array([p[1] for p in run_curve], dtype=float)
    if np.any(c <= 0) or np.any(loss <= 0):
        raise ValueError("compute and loss must be positive")
    if np.any(np.diff(c) <= 0):
        raise ValueError("checkpoint compute values must be strictly increasing")
    if not (c[0] <= target_c <= c[-1]):
        raise OutOfRange(f"target {target_c:g} outside curve hull [{c[0]:g}, {c[-1]:g}]")
    ln_loss = np.interp(np.log(target_c), np.log(c), np.log(loss))
    return float(np.exp(ln_loss))


def isoflop_profile(points: Sequence[tuple[float, float]]) -> float:
    """Optimal model size at one budget from a parabola in ln n.

    Fits loss = a x^2 + b x + c0 with x = ln n by least squares and returns
    exp(-b / 2a). Requires >= 3 distinct sizes, upward curvature (a > 0) and
    a vertex strictly inside the sampled range; otherwise the budget carries
    no interior minimum and is dropped by the pipeline.
    """
    n = np.array([p[0] for p in points], dtype=float)
    loss = np.array([p[1] for p in points], dtype=float)
    if len(set(n.tolist())) < 3:
        raise ValueError("profile needs at least 3 points with distinct n")
    if np.any(n <= 0):
        raise ValueError("model sizes must be positive")
    x = np.log(n)
    a, b, _c0 = np.polyfit(x, loss, 2)
    if a <= 0:
        raise NoInteriorMinimum(f"no upward curvature (a = {a:g})")
    vertex = -b / (2.0 * a)
    if not (x.min() < vertex < x.max()):
        raise NoInteriorMinimum(
            f"vertex ln n = {vertex:g} outside sampled range [{x.min():g}, {x.max():g}]"
        )
    return float(np.exp(vertex))


@dataclass(frozen=True)
class RatioFit:
    """OLS fit of ln n_star on ln c, with per-coefficient standard errors."""

    params: RatioParams
    se_log_n0: float
    se_exp_a: float
    n_samples: int


def fit_ratio_law(samples: Sequence[tuple[float, float]]) -> RatioFit:
    """Ordinary least squares of ln(n_star) on ln(c)."""
    if len(samples) < 2:
        raise Degenerate("ratio law needs at least 2 (c, n_star) samples")
    c = np.array([s[0] for s in samples], dtype=float)
    n_star = np.array([s[1] for s in samples], dtype=float)
    if np.any(c <= 0) or np.any(n_star <= 0):
        raise ValueError("budgets and sizes must be positive")
    if len(set(c.tolist())) < 2:
        raise Degenerate("all compute budgets are equal")
    x = np.log(c)
    y = np.log(n_star)
    m = len(x)
    x_mean = x.mean()
    sxx = float(np.sum((x - x_mean) ** 2))
    slope = float(np.sum((x - x_mean) * (y - y.mean())) / sxx)
    intercept = float(y.mean() - slope * x_mean)
    resid = y - (intercept + slope * x)
    if m > 2:
        s2 = float(resid @ resid) / (m - 2)
        se_slope = float(np.sqrt(s2 / sxx))
        se_intercept = float(np.sqrt(s2 * (1.0 / m + x_mean**2 / sxx)))
    else:
        se_slope = se_intercept = float("nan")
    return RatioFit(RatioParams(log_n0=intercept, exp_a=slope), se_intercept, se_slope, m)


# ---------------------------------------------------------------------------
# Bin construction and pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IsoflopBin:
    """All (run, size, interpolated loss) contributions at one budget."""

    budget: float
    points: tuple[tuple[str, float, float], ...]  # (run_id, n, loss)


def _run_curves(ds: ComputeAnnotatedDataset):
    """Per-run (n, [(c, loss), ...]) curves, ordered by compute."""
    by_run: dict[str, list] = {}
    for ann in ds.records:
        by_run.setdefault(ann.record.run_id, []).append(ann)
    curves = {}
    for run_id in sorted(by_run):
        anns = sorted(by_run[run_id], key=lambda a: (a.c_effective, a.record.step))
        pts = []
        for a in anns:
            if pts and a.c_effective <= pts[-1][0]:
                logger.debug("run %s: dropping non-increasing checkpoint compute", run_id)
                continue
            pts.append((a.c_effective, a.record.loss))
        curves[run_id] = (anns[0].n_effective, pts)
    return curves


def build_isoflop_bins(
    ds: ComputeAnnotatedDataset,
    budgets: Sequence[float] | None = None,
    auto_count: int = 8,
) -> list[IsoflopBin]:
    """Group interpolated losses by compute budget.

    Explicit budgets must be positive ascending. With ``budgets=None``,
    ``auto_count`` budgets are placed log-uniformly between the 10th and 90th
    percentile of the available compute values. A run contributes to every
    budget inside its own curve hull (a single-checkpoint run only to a
    budget exactly equal to its compute). Bins with too few points are
    emitted anyway and skipped later by the profile step.
    """
    if budgets is None:
        c_all = np.array([a.c_effective for a in ds.records], dtype=float)
        if len(c_all) == 0:
            return []
        p10, p90 = np.percentile(c_all, [10.0, 90.0])
        budgets = np.geomspace(p10, p90, auto_count).tolist() if p10 < p90 else [float(p10)]
    budgets = [float(b) for b in budgets]
    if any(b <= 0 for b in budgets) or any(
        b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])
    ):
        raise ValueError("budgets must be positive and ascending")

    curves = _run_curves(ds)
    bins = []
    for budget in budgets:
        pts = []
        for run_id, (n_eff, curve) in curves.items():
            if len(curve) == 1:
                if curve[0][0] == budget:
                    pts.append((run_id, n_eff, curve[0][1]))
            elif curve[0][0] <= budget <= curve[-1][0]:
                pts.append((run_id, n_eff, interpolate_at_flops(curve, budget)))
        bins.append(IsoflopBin(budget, tuple(pts)))
    return bins


@dataclass(frozen=True)
class IsoflopResult:
    """Everything the ratio-optimization route produced for one dataset."""

    bins: tuple[IsoflopBin, ...]
    profile: tuple[tuple[float, float], ...]  # kept (budget, n_star) pairs
    dropped: tuple[tuple[float, str], ...]  # (budget, reason)
    ratio: RatioFit | None
    ratio_failure: str | None = None

    def to_dict(self) -> dict:
        out = {
            "budgets": [b.budget for b in self.bins],
            "bin_runs": {f"{b.budget:.6g}": [p[0] for p in b.points] for b in self.bins},
            "profile": [{"c": c, "n_star": n} for c, n in self.profile],
            "dropped": [{"c": c, "reason": r} for c, r in self.dropped],
        }
        if self.ratio is not None:
            out["ratio"] = {
                "log_n0": self.ratio.params.log_n0,
                "exp_a": self.ratio.params.exp_a,
                "se_log_n0": self.ratio.se_log_n0,
                "se_exp_a": self.ratio.se_exp_a,
                "n_samples": self.ratio.n_samples,
            }
        if self.ratio_failure:
            out["ratio_failure"] = self.ratio_failure
        return out


def isoflop_pipeline(
    ds: ComputeAnnotatedDataset,
    budgets: Sequence[float] | None = None,
    auto_count: int = 8,
) -> IsoflopResult:
    """bins -> per-budget profiles -> ratio-law regression, tolerating dropouts."""
    bins = build_isoflop_bins(ds, budgets, auto_count)
    profile = []
    dropped = []
    for b in bins:
        if len({p[1] for p in b.points}) < 3:
            dropped.append((b.budget, "fewer than 3 distinct model sizes"))
            continue
        try:
            n_star = isoflop_profile([(p[1], p[2]) for p in b.points])
        except NoInteriorMinimum as exc:
            dropped.append((b.budget, str(exc)))
            logger.info("budget %.3g dropped: %s", b.budget, exc)
            continue
        profile.append((b.budget, n_star))
    ratio = None
    failure = None
    try:
        ratio = fit_ratio_law(profile)
    except Degenerate as exc:
        failure = str(exc)
    return IsoflopResult(tuple(bins), tuple(profile), tuple(dropped), ratio, failure)

"""Scalar fitting objectives over datasets, with analytic gradients.

Four pointwise losses are supported: mse (squared error, no 1/2 factor),
mae, huber(delta) (standard 0.5-factor quadratic branch), and
log_huber(delta), which is huber applied to residuals between log-predicted
and log-observed loss. Because the factor conventions differ, objective
values are comparable only within one kind; reports echo the kind and delta.

Residuals in log space never evaluate the additive law directly: the
log-prediction comes from the form's log-sum-exp evaluation, so the
objective stays finite across the whole initialization grid.

The objective is the MEAN over records (not the sum), making delta and
convergence tolerances independent of dataset size. Records are summed in a
fixed sorted-key order, so permuting the input leaves values and gradients
bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .counting import ComputeAnnotatedDataset
from .errors import DomainError
from .forms import _coerce_vector, _log_predict, _log_predict_grad, param_count

OBJECTIVE_KINDS = ("log_huber", "huber", "mse", "mae")
DEFAULT_LOG_HUBER_DELTA = 1e-3


@dataclass(frozen=True)
class ObjectiveSpec:
    """Which pointwise loss, its knee (for huber kinds), and the residual space.

    log_huber forces log space; the other kinds default to linear space but
    accept space='log' explicitly (e.g. MSE on log-loss).
    """

    kind: str = "log_huber"
    delta: float | None = None
    space: str | None = None

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ValueError(f"unknown objective kind: {self.kind!r}")
        if self.kind in ("huber", "log_huber"):
            delta = self.delta if self.delta is not None else DEFAULT_LOG_HUBER_DELTA
            if not delta > 0:
                raise ValueError("delta must be positive")
            object.__setattr__(self, "delta", delta)
        elif self.delta is not None:
            raise ValueError(f"{self.kind} takes no delta")
        if self.kind == "log_huber":
            if self.space not in (None, "log"):
                raise ValueError("log_huber residuals are defined in log space")
            object.__setattr__(self, "space", "log")
        else:
            space = self.space if self.space is not None else "linear"
            if space not in ("log", "linear"):
                raise ValueError(f"unknown residual space: {space!r}")
            object.__setattr__(self, "space", space)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "space": self.space}
        if self.delta is not None:
            out["delta"] = self.delta
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectiveSpec":
        return cls(kind=d.get("kind", "log_huber"), delta=d.get("delta"), space=d.get("space"))


@dataclass(frozen=True)
class FitProblem:
    """One dataset x law form x objective, ready for minimization.

    Arrays are sorted by (record id, step) at construction so that every
    reduction over records runs in one fixed order.
    """

    n: np.ndarray
    d: np.ndarray
    loss: np.ndarray
    form: str
    objective: ObjectiveSpec
    record_ids: tuple[str, ...]
    data: ComputeAnnotatedDataset | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("n", "d", "loss"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (len(self.n) == len(self.d) == len(self.loss) == len(self.record_ids)):
            raise ValueError("n, d, loss and record_ids must have equal length")
        if len(self.loss) == 0:
            raise ValueError("a fit problem needs at least one record")
        if np.any(self.n <= 0) or np.any(self.d <= 0):
            raise DomainError("n and d must be positive")
        if self.objective.space == "log" and np.any(self.loss <= 0):
            raise DomainError("log-space objectives require positive observed losses")
        object.__setattr__(self, "_ln_n", np.log(self.n))
        object.__setattr__(self, "_ln_d", np.log(self.d))
        object.__setattr__(self, "_ln_loss", np.log(self.loss))

    @classmethod
    def from_annotated(
        cls, data: ComputeAnnotatedDataset, form: str, objective: ObjectiveSpec
    ) -> "FitProblem":
        order = sorted(
            range(len(data.records)),
            key=lambda i: (data.records[i].record.run_id, data.records[i].record.step),
        )
        recs = [data.records[i] for i in order]
        return cls(
            n=np.array([a.n_effective for a in recs]),
            d=np.array([float(a.record.tokens_seen) for a in recs]),
            loss=np.array([a.record.loss for a in recs]),
            form=form,
            objective=objective,
            record_ids=tuple(f"{a.record.run_id}@{a.record.step}" for a in recs),
            data=data,
        )

    @classmethod
    def from_arrays(cls, n, d, loss, form: str, objective: ObjectiveSpec) -> "FitProblem":
        n = np.asarray(n, dtype=float)
        ids = tuple(f"#{i}" for i in range(len(n)))
        return cls(n=n, d=d, loss=loss, form=form, objective=objective, record_ids=ids)

    def check_identifiable(self) -> None:
        """Fitting needs at least as many records as the form has parameters.

        Objective evaluation itself is defined for any non-empty record set,
        so this is checked where fitting starts rather than at construction.
        """
        if len(self.loss) < param_count(self.form):
            raise ValueError(
                f"{len(self.loss)} records cannot identify {param_count(self.form)} "
                f"parameters of the {self.form} form"
            )

    def __len__(self) -> int:
        return len(self.loss)


# ---------------------------------------------------------------------------
# Pointwise pieces
# ---------------------------------------------------------------------------


def residual(pred: float, obs: float, space: str) -> float:
    """ln(pred) - ln(obs) in log space, pred - obs in linear space."""
    if space == "log":
        if pred <= 0 or obs <= 0:
            raise DomainError("log-space residual requires positive values")
        return float(np.log(pred) - np.log(obs))
    if space == "linear":
        return float(pred - obs)
    raise ValueError(f"unknown residual space: {space!r}")


def pointwise_loss(r: float, kind: str, delta: float | None = None) -> float:
    """Value of one pointwise loss at residual r."""
    return float(_pointwise(np.asarray(r, dtype=float), kind, delta))


def _pointwise(r: np.ndarray, kind: str, delta: float | None) -> np.ndarray:
    if kind == "mse":
        return r * r
    if kind == "mae":
        return np.abs(r)
    if kind in ("huber", "log_huber"):
        a = np.abs(r)
        return np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))
    raise ValueError(f"unknown objective kind: {kind!r}")


def _pointwise_deriv(r: np.ndarray, kind: str, delta: float | None) -> np.ndarray:
    if kind == "mse":
        return 2.0 * r
    if kind == "mae":
        return np.sign(r)  # subgradient 0 at r == 0
    if kind in ("huber", "log_huber"):
        return np.clip(r, -delta, delta)
    raise ValueError(f"unknown objective kind: {kind!r}")


# ---------------------------------------------------------------------------
# Dataset-level objective
# ---------------------------------------------------------------------------


def residual_vector(problem: FitProblem, params) -> np.ndarray:
    """Residuals in the objective's space, one per record in problem order."""
    vec = _coerce_vector(problem.form, params)
    log_pred = _log_predict(problem.form, vec, problem._ln_n, problem._ln_d)
    if problem.objective.space == "log":
        return log_pred - problem._ln_loss
    return np.exp(log_pred) - problem.loss


def residual_jacobian(problem: FitProblem, params) -> tuple[np.ndarray, np.ndarray]:
    """(residuals, d residual / d theta) in the objective's space."""
    vec = _coerce_vector(problem.form, params)
    log_pred, jac = _log_predict_grad(problem.form, vec, problem._ln_n, problem._ln_d)
    if problem.objective.space == "log":
        return log_pred - problem._ln_loss, jac
    pred = np.exp(log_pred)
    return pred - problem.loss, jac * pred[:, None]


def objective_value(problem: FitProblem, params) -> float:
    """Mean pointwise loss over the problem's records."""
    r = residual_vector(problem, params)
    return float(np.mean(_pointwise(r, problem.objective.kind, problem.objective.delta)))


def objective_grad(problem: FitProblem, params) -> np.ndarray:
    """Analytic gradient of objective_value in the form's unconstrained coordinates."""
    r, jac = residual_jacobian(problem, params)
    psi = _pointwise_deriv(r, problem.objective.kind, problem.objective.delta)
    return psi @ jac / len(r)


def objective_value_many(
    problem: FitProblem, vectors: np.ndarray, chunk: int = 65536
) -> np.ndarray:
    """objective_value evaluated at a batch of coordinate vectors (rows).

    Grid search and grid-based initialization scan up to millions of candidate
    points; this evaluates them in vectorized (points x records) blocks,
    chunked to bound peak memory.
    """
    vectors = np.asarray(vectors, dtype=float)
    out = np.empty(len(vectors))
    kind, delta, space = problem.objective.kind, problem.objective.delta, problem.objective.space
    ln_n, ln_d = problem._ln_n[None, :], problem._ln_d[None, :]
    for lo in range(0, len(vectors), chunk):
        block = vectors[lo : lo + chunk]
        log_pred = _batch_log_predict(problem.form, block, ln_n, ln_d)
        if space == "log":
            r = log_pred - problem._ln_loss[None, :]
        else:
            r = np.exp(log_pred) - problem.loss[None, :]
        out[lo : lo + chunk] = np.mean(_pointwise(r, kind, delta), axis=1)
    return out


def _batch_log_predict(
    form: str, vectors: np.ndarray, ln_n: np.ndarray, ln_d: np.ndarray
) -> np.ndarray:
    """(points, records) matrix of ln L, log-sum-exp across the additive terms."""
    if form in ("chinchilla", "tied"):
        log_e, log_a, log_b = vectors[:, 0:1], vectors[:, 1:2], vectors[:, 2:3]
        alpha = vectors[:, 3:4]
        beta = vectors[:, 4:5] if form == "chinchilla" else alpha
        t1 = log_a - alpha * ln_n
        t2 = log_b - beta * ln_d
        m = np.maximum(np.maximum(t1, t2), log_e)
        return m + np.log(
            np.exp(log_e - m) + np.exp(t1 - m) + np.exp(t2 - m)
        )
    if form == "kaplan":
        log_nc, log_dc = vectors[:, 0:1], vectors[:, 1:2]
        alpha_n, alpha_d = vectors[:, 2:3], vectors[:, 3:4]
        t1 = (alpha_n / alpha_d) * (log_nc - ln_n)
        t2 = log_dc - ln_d
        return alpha_d * np.logaddexp(t1, t2)
    raise ValueError(f"form {form!r} does not define a loss surface")

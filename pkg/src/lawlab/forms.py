"""Parametric scaling-law families: evaluation, gradients, derived allocations.

Three loss-prediction families are implemented, identified by string tags:

  'chinchilla'  L(N, D) = E + A/N^alpha + B/D^beta
  'tied'        the same with beta == alpha (constant optimal D/N ratio)
  'kaplan'      L(N, D) = [(N_c/N)^(alpha_n/alpha_d) + D_c/D]^alpha_d

plus the two-parameter 'ratio' family N*(C) = N0 * C^a for the
ratio-optimization route, whose D*(C) and rho*(C) follow from C = k·N·D.

The kaplan family is deliberately implemented in the decreasing orientation
(N_c/N, D_c/D) so that loss falls with scale; reports carry a note flagging
this orientation choice.

Optimizers work on unconstrained coordinate vectors: E, A, B, N_c, D_c live
as natural logs (positivity for free), exponents stay raw. Evaluation is done
in log space throughout (log-sum-exp), so enormous A/B grid corners neither
overflow nor lose the gradient signal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import DomainError

# Unconstrained optimizer coordinates per family, in vector order.
FORM_COORDS: dict[str, tuple[str, ...]] = {
    "chinchilla": ("log_e", "log_a", "log_b", "alpha", "beta"),
    "tied": ("log_e", "log_a", "log_b", "alpha"),
    "kaplan": ("log_nc", "log_dc", "alpha_n", "alpha_d"),
    "ratio": ("log_n0", "exp_a"),
}

FIT_FORMS = ("chinchilla", "tied", "kaplan")


def param_count(form: str) -> int:
    return len(FORM_COORDS[form])


@dataclass(frozen=True)
class ChinchillaParams:
    """Three-term additive law: irreducible error plus two power-law deficits."""

    log_e: float
    log_a: float
    log_b: float
    alpha: float
    beta: float

    def __post_init__(self):
        _check_finite_logs(self, ("log_e", "log_a", "log_b"))
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be positive")

    @property
    def e(self) -> float:
        return math.exp(self.log_e)

    @property
    def a(self) -> float:
        return math.exp(self.log_a)

    @property
    def b(self) -> float:
        return math.exp(self.log_b)


@dataclass(frozen=True)
class TiedParams:
    """Additive law with a single shared exponent for both deficit terms."""

    log_e: float
    log_a: float
    log_b: float
    alpha: float

    def __post_init__(self):
        _check_finite_logs(self, ("log_e", "log_a", "log_b"))
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    @property
    def beta(self) -> float:
        return self.alpha

    @property
    def e(self) -> float:
        return math.exp(self.log_e)

    @property
    def a(self) -> float:
        return math.exp(self.log_a)

    @property
    def b(self) -> float:
        return math.exp(self.log_b)


@dataclass(frozen=True)
class KaplanParams:
    """Interaction-form law with critical scales N_c, D_c and two exponents."""

    n_c: float
    d_c: float
    alpha_n: float
    alpha_d: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{f.name} must be finite and positive")
        if not math.isfinite(self.alpha_n / self.alpha_d):
            raise ValueError("alpha_n/alpha_d must be finite")


@dataclass(frozen=True)
class RatioParams:
    """Direct power law for the compute-optimal model size, N*(C) = N0 * C^a."""

    log_n0: float
    exp_a: float

    def __post_init__(self):
        if not (math.isfinite(self.log_n0) and math.isfinite(self.exp_a)):
            raise ValueError("ratio parameters must be finite")


LawParams = ChinchillaParams | TiedParams | KaplanParams


def _check_finite_logs(obj, names):
    for name in names:
        v = getattr(obj, name)
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite")


def form_of(params) -> str:
    if isinstance(params, ChinchillaParams):
        return "chinchilla"
    if isinstance(params, TiedParams):
        return "tied"
    if isinstance(params, KaplanParams):
        return "kaplan"
    if isinstance(params, RatioParams):
        return "ratio"
    raise TypeError(f"not a law parameter object: {type(params)!r}")


def params_to_vector(params) -> np.ndarray:
    """Parameter object -> unconstrained coordinate vector."""
    if isinstance(params, (ChinchillaParams, TiedParams, RatioParams)):
        return np.array([getattr(params, n) for n in FORM_COORDS[form_of(params)]], dtype=float)
    if isinstance(params, KaplanParams):
        return np.array(
            [math.log(params.n_c), math.log(params.d_c), params.alpha_n, params.alpha_d],
            dtype=float,
        )
    raise TypeError(f"not a law parameter object: {type(params)!r}")


def vector_to_params(form: str, vec) -> LawParams | RatioParams:
    """Unconstrained coordinate vector -> parameter object (validating)."""
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (param_count(form),):
        raise ValueError(f"{form} expects {param_count(form)} coordinates, got {vec.shape}")
    values = [float(v) for v in vec]  # plain floats, not numpy scalars
    if form == "chinchilla":
        return ChinchillaParams(*values)
    if form == "tied":
        return TiedParams(*values)
    if form == "kaplan":
        return KaplanParams(math.exp(values[0]), math.exp(values[1]), values[2], values[3])
    if form == "ratio":
        return RatioParams(*values)
    raise ValueError(f"unknown form: {form!r}")


def vector_as_dict(form: str, vec) -> dict[str, float]:
    return {name: float(v) for name, v in zip(FORM_COORDS[form], np.asarray(vec, dtype=float))}


def dict_to_vector(form: str, mapping: dict) -> np.ndarray:
    """Name-keyed coordinates -> vector in coordinate order.

    JSON round trips may reorder dict keys, so reading coordinates back by
    name is the only safe direction.
    """
    try:
        return np.array([float(mapping[name]) for name in FORM_COORDS[form]])
    except KeyError as exc:
        raise ValueError(f"missing coordinate {exc} for form {form!r}")


def _coerce_vector(form: str, params) -> np.ndarray:
    if isinstance(params, (ChinchillaParams, TiedParams, KaplanParams, RatioParams)):
        return params_to_vector(params)
    vec = np.asarray(params, dtype=float)
    if vec.shape != (param_count(form),):
        raise ValueError(f"{form} expects {param_count(form)} coordinates, got {vec.shape}")
    return vec


def _check_positive(name: str, value) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be positive and finite")
    return arr


# ---------------------------------------------------------------------------
# Log-space evaluation and gradients
# ---------------------------------------------------------------------------


def log_predict_loss(form: str, params, n, d) -> np.ndarray | float:
    """ln L(n, d), computed by log-sum-exp (never materializes E + A/N^a + ...)."""
    scalar_out = np.ndim(n) == 0 and np.ndim(d) == 0
    ln_n = np.log(np.atleast_1d(_check_positive("n", n)))
    ln_d = np.log(np.atleast_1d(_check_positive("d", d)))
    ln_n, ln_d = np.broadcast_arrays(ln_n, ln_d)
    vec = _coerce_vector(form, params)
    out = _log_predict(form, vec, ln_n, ln_d)
    return float(out[0]) if scalar_out else out


def _log_predict(form: str, vec: np.ndarray, ln_n: np.ndarray, ln_d: np.ndarray) -> np.ndarray:
    if form in ("chinchilla", "tied"):
        log_e, log_a, log_b = vec[0], vec[1], vec[2]
        alpha = vec[3]
        beta = vec[4] if form == "chinchilla" else alpha
        t = np.stack(
            [np.broadcast_to(log_e, ln_n.shape), log_a - alpha * ln_n, log_b - beta * ln_d]
        )
        m = t.max(axis=0)
        return m + np.log(np.exp(t - m).sum(axis=0))
    if form == "kaplan":
        log_nc, log_dc, alpha_n, alpha_d = vec
        r = alpha_n / alpha_d
        t1 = r * (log_nc - ln_n)
        t2 = log_dc - ln_d
        return alpha_d * np.logaddexp(t1, t2)
    raise ValueError(f"form {form!r} does not define a loss surface")


def _log_predict_grad(
    form: str, vec: np.ndarray, ln_n: np.ndarray, ln_d: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Return (ln L, J) with J[i, k] = d ln L_i / d theta_k.

    The rows of J are softmax weights and stay O(1) even when the additive
    terms span hundreds of orders of magnitude.
    """
    if form in ("chinchilla", "tied"):
        log_e, log_a, log_b = vec[0], vec[1], vec[2]
        alpha = vec[3]
        beta = vec[4] if form == "chinchilla" else alpha
        t0 = np.broadcast_to(log_e, ln_n.shape)
        t1 = log_a - alpha * ln_n
        t2 = log_b - beta * ln_d
        t = np.stack([t0, t1, t2])
        m = t.max(axis=0)
        lse = m + np.log(np.exp(t - m).sum(axis=0))
        w0, w1, w2 = np.exp(t0 - lse), np.exp(t1 - lse), np.exp(t2 - lse)
        if form == "chinchilla":
            jac = np.stack([w0, w1, w2, -w1 * ln_n, -w2 * ln_d], axis=1)
        else:
            jac = np.stack([w0, w1, w2, -w1 * ln_n - w2 * ln_d], axis=1)
        return lse, jac
    if form == "kaplan":
        log_nc, log_dc, alpha_n, alpha_d = vec
        r = alpha_n / alpha_d
        u = log_nc - ln_n
        t1 = r * u
        t2 = log_dc - ln_d
        m = np.logaddexp(t1, t2)
        p1, p2 = np.exp(t1 - m), np.exp(t2 - m)
        lse = alpha_d * m
        jac = np.stack([alpha_n * p1, alpha_d * p2, p1 * u, m - p1 * r * u], axis=1)
        return lse, jac
    raise ValueError(f"form {form!r} does not define a loss surface")


def predict_loss(form: str, params, n, d) -> np.ndarray | float:
    """Predicted loss L(n, d); positive and strictly decreasing in n and d."""
    out = log_predict_loss(form, params, n, d)
    return np.exp(out) if isinstance(out, np.ndarray) else float(np.exp(out))


def grad_params(form: str, params, n, d) -> np.ndarray:
    """Analytic dL/dtheta in the unconstrained coordinates (one row per point)."""
    scalar_out = np.ndim(n) == 0 and np.ndim(d) == 0
    ln_n = np.log(np.atleast_1d(_check_positive("n", n)))
    ln_d = np.log(np.atleast_1d(_check_positive("d", d)))
    ln_n, ln_d = np.broadcast_arrays(ln_n, ln_d)
    vec = _coerce_vector(form, params)
    lse, jac = _log_predict_grad(form, vec, ln_n, ln_d)
    grad = jac * np.exp(lse)[:, None]
    return grad[0] if scalar_out else grad


# ---------------------------------------------------------------------------
# Derived allocations
# ---------------------------------------------------------------------------


def optimal_allocation(
    params: ChinchillaParams | TiedParams, c, flop_constant: float = 6.0
) -> tuple[float, float, float]:
    """Compute-optimal (n_opt, d_opt, rho) at budget c under c = k·n·d.

    Minimizes E + A·n^-alpha + B·d^-beta subject to the constraint; the
    closed-form solution is n_opt = G * (c/k)^(beta/(alpha+beta)) with
    G = (alpha·A / (beta·B))^(1/(alpha+beta)).
    """
    if not isinstance(params, (ChinchillaParams, TiedParams)):
        raise TypeError("optimal_allocation needs additive-form parameters")
    alpha, beta = params.alpha, params.beta
    if alpha + beta == 0:
        raise DomainError("alpha + beta must be nonzero")
    c = float(c)
    if not c > 0:
        raise DomainError("c must be positive")
    if flop_constant <= 0:
        raise DomainError("flop_constant must be positive")
    # log-space throughout: A and B may be e^25-ish at grid corners
    log_g = (math.log(alpha) + params.log_a - math.log(beta) - params.log_b) / (alpha + beta)
    ln_n = log_g + beta / (alpha + beta) * math.log(c / flop_constant)
    n_opt = math.exp(ln_n)
    d_opt = c / (flop_constant * n_opt)
    return n_opt, d_opt, d_opt / n_opt


def ratio_predict(params: RatioParams, c, flop_constant: float = 6.0) -> tuple[float, float, float]:
    """(n_star, d_star, rho_star) from the fitted ratio law at budget c."""
    c = float(c)
    if not c > 0:
        raise DomainError("c must be positive")
    n_star = math.exp(params.log_n0 + params.exp_a * math.log(c))
    d_star = c / (flop_constant * n_star)
    return n_star, d_star, d_star / n_star

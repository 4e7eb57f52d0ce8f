"""Multistart minimization of fit problems.

Four optimizer families: L-BFGS (two-loop recursion, default memory 10), full
BFGS (dense inverse-Hessian update), Levenberg-Marquardt nonlinear least
squares (mse-kind objectives only), and pure grid search over a densified
initialization grid. L-BFGS and BFGS share one backtracking line search
(sufficient-decrease constant 1e-4, step halving); curvature pairs with
nonpositive s.y are skipped instead of enforcing a curvature condition.

Convergence: an optimizer stops with converged=True when, after an accepted
step, both the parameter-step max-norm and the objective decrease fall below
``tol`` (default 1e-6; 1e-4 reproduces the documented stop-earlier variant).
Accepted steps never increase the objective, so no run can end above its
initialization value.

Multistart is deterministic: starting points come from an explicit grid or a
seeded draw, runs are independent, and the report is assembled in init-index
order, so thread scheduling cannot change any output bit.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateResamples, EmptyInit, NonFinite, ObjectiveMismatch
from .forms import FORM_COORDS, param_count, vector_as_dict
from .objectives import (
    FitProblem,
    objective_grad,
    objective_value,
    objective_value_many,
    residual_jacobian,
    residual_vector,
)

OPTIMIZER_KINDS = ("lbfgs", "bfgs", "nls", "grid")
INIT_KINDS = ("full_grid", "best_of_grid", "top_k_of_grid", "random_k", "fixed")

ARMIJO_C1 = 1e-4
DEFAULT_TOL = 1e-6

# Default initialization grid. The 6/6/5/5/5 axis counts follow the common
# multistart recipe; the ranges are this lab's own defaults and are
# config-overridable (every report echoes the grid actually used).
_DEFAULT_AXES = {
    "log_e": (-1.0, 1.5, 5),
    "log_a": (0.0, 25.0, 6),
    "log_b": (0.0, 25.0, 6),
    "alpha": (0.1, 1.0, 5),
    "beta": (0.1, 1.0, 5),
    # kaplan coordinates: critical scales as logs, exponents raw
    "log_nc": (0.0, 30.0, 6),
    "log_dc": (0.0, 30.0, 6),
    "alpha_n": (0.05, 1.0, 5),
    "alpha_d": (0.05, 1.0, 5),
}


@dataclass(frozen=True)
class GridAxis:
    lo: float
    hi: float
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("axis count must be >= 1")
        if not self.lo <= self.hi:
            raise ValueError("axis lo must be <= hi")

    def points(self) -> np.ndarray:
        if self.count == 1:
            return np.array([(self.lo + self.hi) / 2.0])
        return np.linspace(self.lo, self.hi, self.count)


@dataclass(frozen=True)
class GridSpec:
    """Ordered (coordinate name, axis) pairs defining an initialization grid."""

    axes: tuple[tuple[str, GridAxis], ...]

    @classmethod
    def default(cls, form: str, overrides: dict[str, tuple] | None = None) -> "GridSpec":
        axes = []
        for name in FORM_COORDS[form]:
            lo, hi, count = (overrides or {}).get(name, _DEFAULT_AXES[name])
            axes.append((name, GridAxis(float(lo), float(hi), int(count))))
        return cls(tuple(axes))

    @property
    def size(self) -> int:
        return math.prod(axis.count for _, axis in self.axes)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.axes)

    def densified(self, multiplier: int) -> "GridSpec":
        return GridSpec(
            tuple(
                (name, GridAxis(axis.lo, axis.hi, axis.count * multiplier))
                for name, axis in self.axes
            )
        )

    def to_dict(self) -> dict:
        return {
            name: {"lo": axis.lo, "hi": axis.hi, "count": axis.count} for name, axis in self.axes
        }


def generate_grid(spec: GridSpec) -> np.ndarray:
    """All grid points as rows, in lexicographic order (first axis slowest)."""
    pts = [axis.points() for _, axis in spec.axes]
    mesh = np.meshgrid(*pts, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _grid_block(axis_points: list[np.ndarray], start: int, stop: int) -> np.ndarray:
    """Rows [start, stop) of the Cartesian product without materializing it."""
    sizes = [len(p) for p in axis_points]
    idx = np.arange(start, stop)
    cols = []
    stride = math.prod(sizes)
    for pts, size in zip(axis_points, sizes):
        stride //= size
        cols.append(pts[(idx // stride) % size])
    return np.stack(cols, axis=1)


@dataclass(frozen=True)
class InitStrategy:
    """How starting points are chosen.

    kind: 'full_grid' (optimize every grid point), 'best_of_grid' (single
    lowest-objective grid point), 'top_k_of_grid' (k lowest, ties by lower
    index), 'random_k' (seeded draw without replacement), or 'fixed' (one
    explicit reference vector, e.g. coefficients loaded from a preset file).
    ``grid=None`` means the form's default grid.
    """

    kind: str = "top_k_of_grid"
    grid: GridSpec | None = None
    k: int | None = None
    seed: int | None = None
    params: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in INIT_KINDS:
            raise ValueError(f"unknown init strategy: {self.kind!r}")
        if self.kind in ("top_k_of_grid", "random_k"):
            if self.k is None or self.k < 1:
                raise ValueError(f"{self.kind} requires k >= 1")
        if self.kind == "random_k" and self.seed is None:
            raise ValueError("random_k requires an explicit seed")
        if self.kind == "fixed":
            if self.params is None:
                raise ValueError("fixed strategy requires a parameter vector")
            object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.grid is not None:
            out["grid"] = self.grid.to_dict()
        if self.k is not None:
            out["k"] = self.k
        if self.seed is not None:
            out["seed"] = self.seed
        if self.params is not None:
            out["params"] = list(self.params)
        return out


@dataclass(frozen=True)
class OptimizerSpec:
    """Optimizer family plus its stopping rule and gradient mode."""

    kind: str = "lbfgs"
    tol: float = DEFAULT_TOL
    max_iter: int = 500
    grad_mode: str = "analytic"
    fd_h: float = 1e-6
    memory: int = 10
    density_multiplier: int = 5

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ValueError(f"unknown optimizer kind: {self.kind!r}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.grad_mode not in ("analytic", "finite_diff"):
            raise ValueError(f"unknown grad mode: {self.grad_mode!r}")
        if self.memory < 1:
            raise ValueError("memory must be >= 1")
        if self.density_multiplier < 1:
            raise ValueError("density_multiplier must be >= 1")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "grad_mode": self.grad_mode,
            "fd_h": self.fd_h,
            "memory": self.memory,
            "density_multiplier": self.density_multiplier,
        }


@dataclass(frozen=True)
class FitResult:
    """Outcome of one minimize run."""

    form: str
    params: dict[str, float]
    objective: float
    iterations: int
    converged: bool
    init_index: int
    termination_reason: str

    @property
    def vector(self) -> np.ndarray:
        return np.array(list(self.params.values()))

    def to_dict(self) -> dict:
        return {
            "form": self.form,
            "params": self.params,
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "init_index": self.init_index,
            "termination_reason": self.termination_reason,
        }


@dataclass(frozen=True)
class MultistartReport:
    """Every FitResult of a multistart run plus the winner."""

    all_results: tuple[FitResult, ...]
    best_index: int
    strategy: InitStrategy
    optimizer: OptimizerSpec

    @property
    def best(self) -> FitResult:
        return self.all_results[self.best_index]

    def to_dict(self) -> dict:
        return {
            "best_index": self.best_index,
            "best": self.best.to_dict(),
            "n_starts": len(self.all_results),
            "n_converged": sum(1 for r in self.all_results if r.converged),
            "strategy": self.strategy.to_dict(),
            "optimizer": self.optimizer.to_dict(),
            "all_results": [r.to_dict() for r in self.all_results],
        }


# ---------------------------------------------------------------------------
# Initialization selection
# ---------------------------------------------------------------------------


def _resolve_grid(strategy: InitStrategy, form: str) -> GridSpec:
    return strategy.grid if strategy.grid is not None else GridSpec.default(form)


def select_inits(strategy: InitStrategy, problem: FitProblem) -> list[tuple[int, np.ndarray]]:
    """Choose (init_index, vector) starting points for ``problem``."""
    if strategy.kind == "fixed":
        vec = np.asarray(strategy.params, dtype=float)
        if vec.shape != (param_count(problem.form),):
            raise ConfigError(
                f"fixed init has {vec.size} coordinates, form {problem.form} "
                f"needs {param_count(problem.form)}"
            )
        return [(0, vec)]

    grid = _resolve_grid(strategy, problem.form)
    points = generate_grid(grid)
    if strategy.kind == "full_grid":
        return list(enumerate(points))
    if strategy.kind == "random_k":
        if strategy.k > len(points):
            raise ConfigError(f"k={strategy.k} exceeds grid size {len(points)}")
        rng = np.random.default_rng(strategy.seed)
        idx = rng.choice(len(points), size=strategy.k, replace=False)
        return [(int(i), points[int(i)]) for i in idx]

    values = objective_value_many(problem, points)
    values = np.where(np.isfinite(values), values, np.inf)
    if strategy.kind == "best_of_grid":
        i = int(np.argmin(values))  # argmin takes the first on ties
        return [(i, points[i])]
    if strategy.kind == "top_k_of_grid":
        if strategy.k > len(points):
            raise ConfigError(f"k={strategy.k} exceeds grid size {len(points)}")
        order = np.argsort(values, kind="stable")[: strategy.k]
        return [(int(i), points[int(i)]) for i in order]
    raise ValueError(f"unknown init strategy: {strategy.kind!r}")


# ---------------------------------------------------------------------------
# Core minimization engines (also usable on plain callables)
# ---------------------------------------------------------------------------


@dataclass
class EngineResult:
    x: np.ndarray
    value: float
    iterations: int
    converged: bool
    reason: str


def _fd_gradient(fn, x: np.ndarray, h: float) -> np.ndarray:
    g = np.empty_like(x)
    for i in range(len(x)):
        step = h * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (fn(x + e) - fn(x - e)) / (2.0 * step)
    return g


def _backtrack(fn, x, fx, direction, slope):
    """Armijo backtracking: halve the step until sufficient decrease holds."""
    t = 1.0
    for _ in range(60):
        x_new = x + t * direction
        f_new = fn(x_new)
        if np.isfinite(f_new) and f_new <= fx + ARMIJO_C1 * t * slope:
            return x_new, f_new
        t *= 0.5
    return None


def _quasi_newton(fn, grad, x0, tol, max_iter, memory=None):
    """Shared L-BFGS / BFGS loop; ``memory=None`` selects dense BFGS."""
    x = np.asarray(x0, dtype=float).copy()
    fx = fn(x)
    if not np.isfinite(fx):
        raise NonFinite(f"objective is {fx} at the initialization point")
    g = grad(x)
    if not np.all(np.isfinite(g)):
        raise NonFinite("gradient is not finite at the initialization point")

    n = len(x)
    history: list[tuple[np.ndarray, np.ndarray, float]] = []  # (s, y, rho) pairs
    h_dense = np.eye(n) if memory is None else None

    for it in range(1, max_iter + 1):
        gmax = float(np.max(np.abs(g)))
        if gmax <= 1e-14 * max(1.0, abs(fx)):
            return EngineResult(x, fx, it - 1, True, "zero_gradient")

        if memory is None:
            direction = -(h_dense @ g)
        else:
            direction = _two_loop(g, history)
        slope = float(g @ direction)
        if slope >= 0:  # not a descent direction; fall back to steepest descent
            direction = -g
            slope = float(g @ direction)

        step = _backtrack(fn, x, fx, direction, slope)
        if step is None:
            # the step underflowed to nothing: the solution is stable in the
            # stopping rule's sense (zero step, zero decrease), so this counts
            # as converged, with the reason kept distinct from a tol stop
            return EngineResult(x, fx, it - 1, True, "line_search_step_underflow")
        x_new, f_new = step
        g_new = grad(x_new)
        if not np.all(np.isfinite(g_new)):
            return EngineResult(x_new, f_new, it, False, "nonfinite_gradient")

        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 0:
            if memory is None:
                rho = 1.0 / sy
                v = np.eye(n) - rho * np.outer(s, y)
                h_dense = v @ h_dense @ v.T + rho * np.outer(s, s)
            else:
                history.append((s, y, 1.0 / sy))
                if len(history) > memory:
                    history.pop(0)
        else:
            # Nonpositive curvature contradicts the stored quasi-Newton model;
            # the update is skipped and the model restarted, otherwise stale
            # pairs can pin the direction scale in non-convex regions.
            history.clear()
            if memory is None:
                h_dense = np.eye(n)

        step_norm = float(np.max(np.abs(s)))
        decrease = fx - f_new
        x, fx, g = x_new, f_new, g_new
        if step_norm < tol and decrease < tol:
            return EngineResult(x, fx, it, True, "tol")

    return EngineResult(x, fx, max_iter, False, "max_iter")


def _two_loop(g: np.ndarray, history) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(history):
        a = rho * float(s @ q)
        q -= a * y
        alphas.append(a)
    if history:
        s, y, _ = history[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(history, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def minimize_function(
    optimizer: OptimizerSpec, fn, grad=None, x0=None
) -> EngineResult:
    """Run the quasi-Newton engines on a plain callable (test hook).

    The classic 2-D Rosenbrock function below is exposed for exactly this
    purpose.
    """
    x0 = np.asarray(x0, dtype=float)
    if grad is None or optimizer.grad_mode == "finite_diff":
        grad = lambda x: _fd_gradient(fn, x, optimizer.fd_h)  # noqa: E731
    memory = optimizer.memory if optimizer.kind == "lbfgs" else None
    if optimizer.kind not in ("lbfgs", "bfgs"):
        raise ConfigError("minimize_function supports lbfgs and bfgs only")
    return _quasi_newton(fn, grad, x0, optimizer.tol, optimizer.max_iter, memory)


def rosenbrock(x) -> float:
    x = np.asarray(x, dtype=float)
    return float((1.0 - x[0]) ** 2 + 100.0 * (x[1] - x[0] ** 2) ** 2)


def rosenbrock_grad(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.array(
        [
            -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] ** 2),
            200.0 * (x[1] - x[0] ** 2),
        ]
    )


# ---------------------------------------------------------------------------
# Levenberg-Marquardt
# ---------------------------------------------------------------------------


def _levenberg_marquardt(problem: FitProblem, x0, tol, max_iter, grad_mode, fd_h):
    x = np.asarray(x0, dtype=float).copy()

    def resid_jac(vec):
        if grad_mode == "analytic":
            return residual_jacobian(problem, vec)
        r = residual_vector(problem, vec)
        jac = np.empty((len(r), len(vec)))
        for j in range(len(vec)):
            step = fd_h * max(1.0, abs(vec[j]))
            e = np.zeros_like(vec)
            e[j] = step
            jac[:, j] = (residual_vector(problem, vec + e) - residual_vector(problem, vec - e)) / (
                2.0 * step
            )
        return r, jac

    r, jac = resid_jac(x)
    if not np.all(np.isfinite(r)):
        raise NonFinite("residuals are not finite at the initialization point")
    if not np.all(np.isfinite(jac)):
        raise NonFinite("Jacobian is not finite at the initialization point")
    fx = float(np.mean(r * r))
    lam = 1e-3

    for it in range(1, max_iter + 1):
        jtj = jac.T @ jac
        jtr = jac.T @ r
        if float(np.max(np.abs(jtr))) <= 1e-14 * max(1.0, fx):
            return EngineResult(x, fx, it - 1, True, "zero_gradient")
        diag = np.maximum(np.diag(jtj), 1e-12)
        accepted = None
        while lam <= 1e12:
            try:
                delta = np.linalg.solve(jtj + lam * np.diag(diag), -jtr)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = x + delta
            r_new = residual_vector(problem, x_new)
            f_new = float(np.mean(r_new * r_new))
            if np.isfinite(f_new) and f_new < fx:
                accepted = (x_new, r_new, f_new, delta)
                lam = max(lam / 10.0, 1e-12)
                break
            lam *= 10.0
        if accepted is None:
            return EngineResult(x, fx, it - 1, False, "lm_stalled")
        x_new, r_new, f_new, delta = accepted
        step_norm = float(np.max(np.abs(delta)))
        decrease = fx - f_new
        x, r, fx = x_new, r_new, f_new
        _, jac = resid_jac(x)
        if step_norm < tol and decrease < tol:
            return EngineResult(x, fx, it, True, "tol")

    return EngineResult(x, fx, max_iter, False, "max_iter")


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------


def _grid_search(problem: FitProblem, spec: GridSpec, x0) -> EngineResult:
    """Exhaustive argmin over the grid (streamed in blocks); ties by lower index.

    The initialization is kept as a fallback candidate so the result can
    never be worse than the starting point, but it does not count as an
    evaluated grid point.
    """
    axis_points = [axis.points() for _, axis in spec.axes]
    total = spec.size
    best_val = math.inf
    best_idx = -1
    chunk = 65536
    for lo in range(0, total, chunk):
        hi = min(lo + chunk, total)
        block = _grid_block(axis_points, lo, hi)
        vals = objective_value_many(problem, block)
        vals = np.where(np.isfinite(vals), vals, np.inf)
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val = float(vals[i])
            best_idx = lo + i
    best_x = _grid_block(axis_points, best_idx, best_idx + 1)[0]
    f0 = objective_value(problem, x0)
    if np.isfinite(f0) and f0 < best_val:
        best_x, best_val = np.asarray(x0, dtype=float), float(f0)
    return EngineResult(best_x, best_val, total, True, "grid_exhausted")


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def minimize(
    optimizer: OptimizerSpec,
    problem: FitProblem,
    init,
    init_index: int = 0,
    base_grid: GridSpec | None = None,
) -> FitResult:
    """Minimize ``problem`` from one starting vector.

    ``base_grid`` feeds the grid optimizer (it searches a grid
    ``density_multiplier`` times denser per axis); when omitted, the form's
    default grid is densified.
    """
    init = np.asarray(init, dtype=float)
    if init.shape != (param_count(problem.form),):
        raise ValueError(
            f"init has {init.size} coordinates, form {problem.form} "
            f"needs {param_count(problem.form)}"
        )
    problem.check_identifiable()

    if optimizer.kind == "grid":
        spec = (base_grid or GridSpec.default(problem.form)).densified(
            optimizer.density_multiplier
        )
        out = _grid_search(problem, spec, init)
    elif optimizer.kind == "nls":
        if problem.objective.kind != "mse":
            raise ObjectiveMismatch(
                "nonlinear least squares requires an mse objective, got "
                f"{problem.objective.kind!r}"
            )
        out = _levenberg_marquardt(
            problem, init, optimizer.tol, optimizer.max_iter, optimizer.grad_mode, optimizer.fd_h
        )
    else:
        fn = lambda x: objective_value(problem, x)  # noqa: E731
        if optimizer.grad_mode == "analytic":
            grad = lambda x: objective_grad(problem, x)  # noqa: E731
        else:
            grad = lambda x: _fd_gradient(fn, x, optimizer.fd_h)  # noqa: E731
        memory = optimizer.memory if optimizer.kind == "lbfgs" else None
        out = _quasi_newton(fn, grad, init, optimizer.tol, optimizer.max_iter, memory)

    return FitResult(
        form=problem.form,
        params=vector_as_dict(problem.form, out.x),
        objective=float(out.value),
        iterations=out.iterations,
        converged=out.converged,
        init_index=init_index,
        termination_reason=out.reason,
    )


def fit(
    problem: FitProblem,
    strategy: InitStrategy,
    optimizer: OptimizerSpec,
    threads: int = 1,
) -> MultistartReport:
    """Minimize from every selected initialization and pick the best result.

    Best = lowest objective among converged runs when any converged, else
    among all runs; ties go to the lower init index. Pure grid search is a
    global procedure whose outcome does not depend on the starting point, so
    it runs exactly once regardless of the strategy.
    """
    inits = select_inits(strategy, problem)
    if not inits:
        raise EmptyInit("initialization strategy produced no starting points")

    base_grid = _resolve_grid(strategy, problem.form)
    if optimizer.kind == "grid":
        idx, vec = inits[0]
        results = [minimize(optimizer, problem, vec, idx, base_grid=base_grid)]
    else:
        def run(item):
            idx, vec = item
            return minimize(optimizer, problem, vec, idx, base_grid=base_grid)

        if threads > 1 and len(inits) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(run, inits))
        else:
            results = [run(item) for item in inits]

    results.sort(key=lambda r: r.init_index)
    converged = [i for i, r in enumerate(results) if r.converged]
    candidates = converged if converged else range(len(results))
    best_index = min(candidates, key=lambda i: (results[i].objective, results[i].init_index))
    return MultistartReport(tuple(results), best_index, strategy, optimizer)


@dataclass(frozen=True)
class BootstrapResult:
    """Point fit plus percentile confidence intervals from seeded resampling."""

    point: MultistartReport
    intervals: dict[str, tuple[float, float]]
    samples: tuple[dict[str, float], ...]
    b: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "b": self.b,
            "seed": self.seed,
            "point": self.point.best.to_dict(),
            "intervals": {k: list(v) for k, v in self.intervals.items()},
        }


def bootstrap_fit(
    problem: FitProblem,
    strategy: InitStrategy,
    optimizer: OptimizerSpec,
    b: int,
    seed: int,
    max_retries: int = 100,
) -> BootstrapResult:
    """Refit ``b`` seeded with-replacement resamples; report 2.5/97.5 intervals.

    Resamples with fewer distinct (n, d) pairs than the form has parameters
    cannot identify it and are redrawn (bounded retries).
    """
    if b < 2:
        raise ValueError("bootstrap needs b >= 2")
    rng = np.random.default_rng(seed)
    point = fit(problem, strategy, optimizer)
    needed = param_count(problem.form)
    n_records = len(problem)

    samples = []
    for _ in range(b):
        for _attempt in range(max_retries):
            idx = rng.integers(0, n_records, size=n_records)
            distinct = {(problem.n[i], problem.d[i]) for i in idx}
            if len(distinct) >= needed:
                break
        else:
            raise DegenerateResamples(
                f"could not draw a non-degenerate resample in {max_retries} tries"
            )
        sub = FitProblem(
            n=problem.n[idx],
            d=problem.d[idx],
            loss=problem.loss[idx],
            form=problem.form,
            objective=problem.objective,
            record_ids=tuple(problem.record_ids[i] for i in idx),
        )
        samples.append(fit(sub, strategy, optimizer).best.params)

    names = FORM_COORDS[problem.form]
    arr = np.array([[s[name] for name in names] for s in samples])
    lo, hi = np.percentile(arr, [2.5, 97.5], axis=0)
    intervals = {name: (float(lo[j]), float(hi[j])) for j, name in enumerate(names)}
    return BootstrapResult(point, intervals, tuple(samples), b, seed)

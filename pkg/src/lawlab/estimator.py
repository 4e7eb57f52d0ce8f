"""Scikit-learn estimator wrapper around the fitting engine.

``ScalingLawRegressor`` exposes the multistart law fit through the standard
fit/predict/get_params surface so it drops into sklearn pipelines, grid
searches and cross-validation unchanged. X has two columns (model size N,
token count D); y is the observed loss.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .fitters import GridSpec, InitStrategy, OptimizerSpec, fit
from .forms import dict_to_vector, optimal_allocation, predict_loss, vector_to_params
from .objectives import FitProblem, ObjectiveSpec, objective_value


class ScalingLawRegressor(RegressorMixin, BaseEstimator):
    """Fit a parametric scaling law L(N, D) with deterministic multistart.

    Parameters mirror the experiment-config vocabulary: a law form
    ('chinchilla', 'tied', 'kaplan'), an objective kind with optional knee
    ``delta`` and residual ``space``, an optimizer family, and an
    initialization strategy over the default grid.

    Attributes (after fit): ``params_`` (coordinate dict), ``law_params_``
    (typed parameter object), ``report_`` (full multistart report),
    ``objective_value_``.
    """

    def __init__(
        self,
        form: str = "chinchilla",
        objective: str = "log_huber",
        delta: float | None = None,
        space: str | None = None,
        optimizer: str = "lbfgs",
        tol: float = 1e-6,
        max_iter: int = 500,
        grad_mode: str = "analytic",
        init: str = "top_k_of_grid",
        k: int = 10,
        seed: int = 0,
        grid: dict | None = None,
        threads: int = 1,
    ):
        self.form = form
        self.objective = objective
        self.delta = delta
        self.space = space
        self.optimizer = optimizer
        self.tol = tol
        self.max_iter = max_iter
        self.grad_mode = grad_mode
        self.init = init
        self.k = k
        self.seed = seed
        self.grid = grid
        self.threads = threads

    def _validate_data_matrix(self, X, y=None):
        if y is not None:
            X, y = check_X_y(X, y, y_numeric=True)
        else:
            X = check_array(X)
        if X.shape[1] != 2:
            raise ValueError("X must have exactly 2 columns: (N, D)")
        if np.any(X <= 0):
            raise ValueError("N and D must be positive")
        if y is not None and np.any(np.asarray(y) <= 0):
            raise ValueError("observed losses must be positive")
        return (X, y) if y is not None else X

    def fit(self, X, y):
        X, y = self._validate_data_matrix(X, y)
        spec = ObjectiveSpec(kind=self.objective, delta=self.delta, space=self.space)
        problem = FitProblem.from_arrays(X[:, 0], X[:, 1], y, self.form, spec)
        grid = GridSpec.default(self.form, self.grid) if self.grid else None
        needs_k = self.init in ("top_k_of_grid", "random_k")
        strategy = InitStrategy(
            kind=self.init,
            grid=grid,
            k=self.k if needs_k else None,
            seed=self.seed if self.init == "random_k" else None,
        )
        opt = OptimizerSpec(
            kind=self.optimizer,
            tol=self.tol,
            max_iter=self.max_iter,
            grad_mode=self.grad_mode,
        )
        report = fit(problem, strategy, opt, threads=self.threads)
        self.n_features_in_ = 2
        self.report_ = report
        self.params_ = report.best.params
        self.objective_value_ = report.best.objective
        try:
            self.law_params_ = vector_to_params(self.form, report.best.vector)
        except ValueError:
            self.law_params_ = None  # degenerate fit; coordinates still in params_
        self.problem_ = problem
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = self._validate_data_matrix(X)
        vec = dict_to_vector(self.form, self.params_)
        return np.asarray(predict_loss(self.form, vec, X[:, 0], X[:, 1]))

    def objective_at(self, params) -> float:
        """Objective value of an arbitrary coordinate vector on the fitted data."""
        check_is_fitted(self, "problem_")
        return objective_value(self.problem_, params)

    def optimal_allocation(self, c, flop_constant: float = 6.0):
        """Compute-optimal (n_opt, d_opt, rho) at budget c (additive forms only)."""
        check_is_fitted(self, "params_")
        if self.law_params_ is None or self.form not in ("chinchilla", "tied"):
            raise ValueError("closed-form allocation needs a valid chinchilla/tied fit")
        return optimal_allocation(self.law_params_, c, flop_constant)

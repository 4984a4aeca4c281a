"""Moving-window forecasting with a spline-estimated link function.

Each window refits the whole pipeline on the trailing rows only; the new
observation's factor score comes from regressing x_t on the trained
loadings, never from refitting the decomposition with row t included, so
no statistic used to predict Y_t ever sees Y_t or x_t.

The link is fit on raw Y against the fitted index (prediction targets the
Y scale, not the transform scale) and extrapolates as a constant beyond
the training index range, since exponential-type links explode under
linear extrapolation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._parallel import parallel_map
from .core_data import Dataset, SeedSpec, center_columns, rank_transform
from .estimate import lasso_fit, project_response, select_lambda
from .exceptions import InvalidInputError
from .factor import default_k_max, fit_factors, select_num_factors
from .fast import gamma_ls

_WINDOW_TAG = 0xF0CA


@dataclass(frozen=True)
class SplineLink:
    """Least-squares cubic B-spline; constant beyond the fitted range."""

    knots: np.ndarray        # interior knots
    coefficients: np.ndarray
    degree: int
    x_min: float
    x_max: float

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        if self.x_max <= self.x_min:
            return np.full(x.shape, self.coefficients[0])
        xc = np.clip(x, self.x_min, self.x_max)
        N = _bspline_design(xc, _full_knots(self.knots, self.degree, self.x_min, self.x_max), self.degree)
        return N @ self.coefficients


@dataclass(frozen=True)
class ForecastReport:
    predictions: np.ndarray  # rows of (time index, Y_true, Y_hat), 1-based time
    mse: float


def _full_knots(interior: np.ndarray, degree: int, lo: float, hi: float) -> np.ndarray:
    return np.concatenate([np.full(degree + 1, lo), interior, np.full(degree + 1, hi)])


def _bspline_design(x: np.ndarray, knots: np.ndarray, degree: int) -> np.ndarray:
    """Cox-de Boor recursion on a clamped knot vector."""
    n_basis = knots.size - degree - 1
    hi = knots[-1]
    # order-1 (piecewise constant) basis; right boundary closed
    N = np.zeros((x.size, knots.size - 1))
    for i in range(knots.size - 1):
        left, right = knots[i], knots[i + 1]
        if left == right:
            continue
        inside = (x >= left) & ((x < right) | ((right == hi) & (x <= hi)))
        N[inside, i] = 1.0
    for k in range(1, degree + 1):
        Nk = np.zeros((x.size, knots.size - 1 - k))
        for i in range(knots.size - 1 - k):
            d1 = knots[i + k] - knots[i]
            d2 = knots[i + k + 1] - knots[i + 1]
            term = 0.0
            if d1 > 0:
                term = (x - knots[i]) / d1 * N[:, i]
            if d2 > 0:
                term = term + (knots[i + k + 1] - x) / d2 * N[:, i + 1]
            Nk[:, i] = term
        N = Nk
    return N[:, :n_basis]


def fit_link(index: np.ndarray, Y: np.ndarray, n_knots: int = 6, degree: int = 3) -> SplineLink:
    """Least-squares spline of Y on the scalar index.

    Interior knots sit at empirical quantiles of the index; the normal
    equations carry a 1e-10 ridge jitter for rank safety.
    """
    x = np.asarray(index, dtype=np.float64).ravel()
    y = np.asarray(Y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise InvalidInputError("index and Y lengths differ")
    if x.size < n_knots + degree + 1:
        raise InvalidInputError(
            f"need at least n_knots + degree + 1 = {n_knots + degree + 1} points, got {x.size}"
        )
    lo, hi = float(np.min(x)), float(np.max(x))
    if hi <= lo:
        return SplineLink(
            knots=np.empty(0), coefficients=np.array([float(np.mean(y))]),
            degree=degree, x_min=lo, x_max=hi,
        )
    qs = np.arange(1, n_knots + 1) / (n_knots + 1)
    interior = np.quantile(x, qs)
    interior = interior[(interior > lo) & (interior < hi)]
    N = _bspline_design(x, _full_knots(interior, degree, lo, hi), degree)
    G = N.T @ N + 1e-10 * np.eye(N.shape[1])
    coef = np.linalg.solve(G, N.T @ y)
    return SplineLink(knots=interior, coefficients=coef, degree=degree, x_min=lo, x_max=hi)


@dataclass(frozen=True)
class ForecastConfig:
    K: Optional[int] = None
    K_max: Optional[int] = None
    lam: Optional[float] = None
    folds: int = 10
    n_knots: int = 6
    seed: SeedSpec = SeedSpec(0)


def project_new_row(B_hat: np.ndarray, x_centered: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Factor score and idiosyncratic part of a held-out observation.

    f_t solves the loading regression (B'B)^{-1} B' x; u_t is the residual.
    """
    f_t, *_ = np.linalg.lstsq(B_hat, x_centered, rcond=None)
    return f_t, x_centered - B_hat @ f_t


def moving_window_forecast(
    panel: Dataset,
    window: int = 90,
    config: ForecastConfig = ForecastConfig(),
    threads: Optional[int] = None,
) -> ForecastReport:
    """One-step-ahead forecasts Y_hat_t = g_hat(f_t' gamma + u_t' beta).

    For every t > window the pipeline (factors, rank transform, projected
    lasso, spline link) is refit on rows [t-window, t-1] and applied to
    x_t.
    """
    T = panel.n
    if not (0 < window < T):
        raise InvalidInputError(f"window must be in (0, T); got {window} with T={T}")
    k_for_check = config.K if config.K is not None else 1
    if window <= k_for_check:
        raise InvalidInputError(f"window {window} too small for {k_for_check} factors")

    def one(i: int) -> tuple[float, float, float]:
        t = window + i
        X_tr = panel.X[t - window : t]
        Y_tr = panel.Y[t - window : t]
        Xc, means = center_columns(X_tr)
        K = config.K
        if K is None:
            K = select_num_factors(
                Xc, config.K_max if config.K_max is not None else default_k_max(window)
            )
        fd = fit_factors(Xc, K)
        h = rank_transform(Y_tr)
        h_tilde = project_response(fd, h)
        lam = config.lam
        if lam is None:
            lam = select_lambda(
                fd.U_hat, h_tilde, folds=config.folds,
                seed=config.seed.derive(_WINDOW_TAG, t),
            )
        beta = lasso_fit(fd.U_hat, h_tilde, lam).beta
        gamma = gamma_ls(fd.F_hat, h)
        index_tr = fd.F_hat @ gamma + fd.U_hat @ beta
        link = fit_link(index_tr, Y_tr, n_knots=config.n_knots)
        f_t, u_t = project_new_row(fd.B_hat, panel.X[t] - means)
        y_hat = float(link(float(f_t @ gamma + u_t @ beta))[0])
        return float(t + 1), float(panel.Y[t]), y_hat

    rows = parallel_map(one, T - window, threads)
    preds = np.asarray(rows, dtype=np.float64)
    mse = float(np.mean((preds[:, 1] - preds[:, 2]) ** 2))
    return ForecastReport(predictions=preds, mse=mse)


def least_squares_forecast(panel: Dataset, window: int = 90) -> ForecastReport:
    """Plain least squares of Y on (1, x): the non-robust reference forecaster.

    Uses the minimum-norm solution when the window has fewer rows than
    covariates.
    """
    T = panel.n
    if not (0 < window < T):
        raise InvalidInputError(f"window must be in (0, T); got {window} with T={T}")
    rows = []
    for t in range(window, T):
        X_tr = panel.X[t - window : t]
        Y_tr = panel.Y[t - window : t]
        A = np.column_stack([np.ones(window), X_tr])
        coef, *_ = np.linalg.lstsq(A, Y_tr, rcond=None)
        y_hat = float(coef[0] + panel.X[t] @ coef[1:])
        rows.append((float(t + 1), float(panel.Y[t]), y_hat))
    preds = np.asarray(rows, dtype=np.float64)
    mse = float(np.mean((preds[:, 1] - preds[:, 2]) ** 2))
    return ForecastReport(predictions=preds, mse=mse)


def oracle_linear_forecast(
    Y: np.ndarray,
    truth: dict,
    window: int = 90,
) -> ForecastReport:
    """Infeasible benchmark for linear panels: predicts with the true index.

    Uses the generator's own factors, idiosyncratic parts, and
    coefficients, so its MSE is essentially the noise floor.
    """
    F, U = truth["F"], truth["U"]
    beta, gamma = truth["beta"], truth["gamma"]
    T = Y.shape[0]
    idx = U @ beta + F @ gamma
    rows = [(float(t + 1), float(Y[t]), float(idx[t])) for t in range(window, T)]
    preds = np.asarray(rows, dtype=np.float64)
    mse = float(np.mean((preds[:, 1] - preds[:, 2]) ** 2))
    return ForecastReport(predictions=preds, mse=mse)

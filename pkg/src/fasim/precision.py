"""Sparse precision-matrix estimation under a max-norm constraint.

Each row of the estimate solves the column problem
``min ||theta||_1  s.t.  ||Sigma_hat theta - e_j||_inf <= delta_n``; the
matrix objective and constraint are column-separable, so the joint
problem decomposes exactly into these p independent linear programs.

The solver is in-repo: linearized ADMM iterated per column (batched as
matrix operations, with converged columns frozen) plus a vertex "polish"
step that, once the active set has stabilized, solves the implied linear
system and certifies optimality through an explicit dual feasibility and
duality-gap check.  A certified column is exact to solver roundoff; an
uncertified column falls back to the ADMM iterate, whose feasibility is
still enforced to delta_n + 1e-7.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core_data import SeedSpec
from .exceptions import InvalidInputError

_DELTA_CV_TAG = 0xDE17A

# solver defaults
_TOL_PRIMAL = 1e-7
_TOL_DUAL = 1e-6
_MAX_ITER = 20_000
_CHECK_EVERY = 25
_STALL_ITERS = 350
#: Uncertified columns stop iterating here; the polish certificate is what
#: delivers exactness, and columns it cannot certify (typically infeasible
#: ones) gain nothing from marching the first-order iteration further.
_SOFT_CAP = 800
_OVER_RELAX = 1.7
_RHO_INIT = 4.0


@dataclass(frozen=True)
class PrecisionEstimate:
    """Symmetrized CLIME-style estimate of the idiosyncratic precision."""

    Theta: np.ndarray            # (p, p), exactly symmetric
    delta_n: float
    feasible: np.ndarray         # (p,) bool, per pre-symmetrization column problem
    Sigma_u_hat: np.ndarray      # (p, p) sample covariance the problem was built on
    theta_raw: np.ndarray        # (p, p) pre-symmetrization solution (rows)


def sample_cov_u(U_hat: np.ndarray) -> np.ndarray:
    """Second-moment matrix U'U/n of the idiosyncratic components."""
    U = np.asarray(U_hat, dtype=np.float64)
    if U.ndim != 2 or U.shape[0] < 2:
        raise InvalidInputError("U_hat must be 2-d with n >= 2 rows")
    return U.T @ U / U.shape[0]


def symmetrize_min_magnitude(M: np.ndarray) -> np.ndarray:
    """Entrywise pick of the smaller-magnitude member of (M_ij, M_ji).

    Magnitude ties keep the upper-triangle entry for both positions, which
    makes the output exactly symmetric even when tied entries differ in
    sign (a measure-zero case the raw indicator rule leaves asymmetric).
    """
    M = np.asarray(M, dtype=np.float64)
    Mt = M.T
    take_own = np.abs(M) < np.abs(Mt)
    iu = np.triu(np.ones_like(M, dtype=bool))
    tie = np.abs(M) == np.abs(Mt)
    take_own = take_own | (tie & iu)
    out = np.where(take_own, M, Mt)
    return np.where(iu, out, out.T.copy())  # mirror upper wins on ties


def _dual_objective(nu: np.ndarray, e: np.ndarray, delta: float) -> float:
    return float(-(e @ nu) - delta * np.sum(np.abs(nu)))


def _try_polish(
    Sigma: np.ndarray,
    e: np.ndarray,
    delta: float,
    x: np.ndarray,
    y_dual: np.ndarray,
    feas_tol: float = 1e-9,
    cert_tol: float = 1e-7,
) -> Optional[np.ndarray]:
    """Attempt to recover the exact LP vertex from an approximate iterate.

    Identifies the support of x and the active constraints (from the ADMM
    dual variable, falling back to residual proximity), solves the implied
    square system, and accepts only if the candidate is primal feasible and
    a dual solution supported on the active set certifies a ~1e-9 gap.
    """
    p = Sigma.shape[0]
    v = Sigma @ x - e
    supp_tol = max(1e-9, 1e-6 * float(np.max(np.abs(x))) if x.size else 0.0)
    S = np.flatnonzero(np.abs(x) > supp_tol)
    y_scale = float(np.max(np.abs(y_dual))) if y_dual.size else 0.0
    candidates = []
    if y_scale > 0:
        candidates.append(np.flatnonzero(np.abs(y_dual) > max(1e-8, 1e-5 * y_scale)))
    candidates.append(np.flatnonzero(np.abs(v) >= delta - max(1e-6, 1e-3 * delta)))
    if S.size == 0:
        # candidate solution is exactly zero
        if float(np.max(np.abs(e))) <= delta + feas_tol:
            return np.zeros(p)
        return None
    s_S = np.sign(x[S])
    for A in candidates:
        if A.size != S.size or A.size == 0:
            continue
        G = Sigma[np.ix_(A, S)]
        try:
            theta_S = np.linalg.solve(G, e[A] + delta * np.sign(v[A]))
        except np.linalg.LinAlgError:
            continue
        theta = np.zeros(p)
        theta[S] = theta_S
        resid = Sigma @ theta - e
        if float(np.max(np.abs(resid))) > delta * (1 + 1e-12) + feas_tol:
            continue
        # dual certificate: nu supported on A with (Sigma' nu)_S = -sign(theta_S),
        # |Sigma' nu| <= 1 everywhere, sign(nu_i) matching the active side
        try:
            nu_A = np.linalg.solve(Sigma[np.ix_(A, S)].T, -np.sign(theta[S]))
        except np.linalg.LinAlgError:
            continue
        w = Sigma[A, :].T @ nu_A  # Sigma' nu restricted to the support of nu
        if float(np.max(np.abs(w))) > 1 + cert_tol:
            continue
        nu_scale = max(1.0, float(np.max(np.abs(nu_A))))
        if np.any(nu_A * np.sign(v[A]) < -cert_tol * nu_scale):
            continue
        gap = float(np.sum(np.abs(theta))) - _dual_objective(
            _scatter(nu_A, A, p), e, delta
        )
        if abs(gap) <= 1e-8 * max(1.0, float(np.sum(np.abs(theta)))):
            return theta
    return None


def _scatter(values: np.ndarray, idx: np.ndarray, p: int) -> np.ndarray:
    out = np.zeros(p)
    out[idx] = values
    return out


def _solve_columns(
    Sigma: np.ndarray,
    targets: np.ndarray,
    delta: float,
    tol_primal: float = _TOL_PRIMAL,
    tol_dual: float = _TOL_DUAL,
    max_iter: int = _MAX_ITER,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve min ||x||_1 s.t. ||Sigma x - t||_inf <= delta for each target column.

    Returns (solutions (p, m), feasible (m,)).  Column state evolves
    independently (all updates are column-separable), so the batched run is
    identical to solving each column on its own.
    """
    Sigma = np.asarray(Sigma, dtype=np.float64)
    E = np.asarray(targets, dtype=np.float64)
    if E.ndim == 1:
        E = E[:, None]
    p, m = E.shape
    if Sigma.shape != (p, p):
        raise InvalidInputError("Sigma must be square and match the target length")
    if delta <= 0:
        raise InvalidInputError(f"delta must be positive, got {delta}")

    lam_max = float(np.linalg.eigvalsh(Sigma)[-1]) if p > 1 else float(abs(Sigma[0, 0]))
    lam_max = max(lam_max, 1e-12)

    diag = np.diag(Sigma).copy()
    X = np.zeros((p, m))
    solved = np.zeros(m, dtype=bool)
    feasible = np.ones(m, dtype=bool)

    # trivial and degenerate columns
    zero_rows = np.max(np.abs(Sigma), axis=1) <= 1e-300
    for c in range(m):
        e = E[:, c]
        if float(np.max(np.abs(e))) <= delta:
            X[:, c] = 0.0
            solved[c] = True
        else:
            bad = zero_rows & (np.abs(e) > delta)
            if np.any(bad):
                # constraint row can never be met: declare infeasible
                X[:, c] = 0.0
                solved[c] = True
                feasible[c] = False

    active = np.flatnonzero(~solved)
    if active.size == 0:
        return X, feasible

    # warm start: scaled diagonal guess
    X0 = np.zeros((p, m))
    safe = diag > 1e-300
    scale = np.where(safe, np.clip(1.0 - delta, 0.0, None) / np.where(safe, diag, 1.0), 0.0)
    for c in active:
        X0[:, c] = scale * E[:, c]
    Xa = X0[:, active]
    Ea = E[:, active]
    Va = Sigma @ Xa - Ea
    Za = np.clip(Va, -delta, delta)
    Ua = np.zeros_like(Xa)
    rho = np.full(active.size, _RHO_INIT)
    mu = rho * (lam_max**2) * 1.01

    cols = active.copy()          # global column ids of current working set
    m_act = active.size
    best_pri = np.full(m_act, np.inf)
    stalled_for = np.zeros(m_act, dtype=np.int64)
    prev_sig = [b""] * m_act          # support signature at the last check
    failed_sig = [b""] * m_act        # signature whose polish already failed
    it = 0
    while cols.size > 0 and it < max_iter:
        it += 1
        R = Va - Za + Ua
        step = (rho / mu)[None, :]
        Xa = Xa - step * (Sigma.T @ R)
        thr = (1.0 / mu)[None, :]
        Xa = np.sign(Xa) * np.maximum(np.abs(Xa) - thr, 0.0)
        Va = Sigma @ Xa - Ea
        V_relaxed = _OVER_RELAX * Va + (1.0 - _OVER_RELAX) * Za
        Z_old = Za
        Za = np.clip(V_relaxed + Ua, -delta, delta)
        Ua = Ua + V_relaxed - Za

        if it % _CHECK_EVERY == 0 or it == max_iter:
            pri = np.max(np.abs(Va - Za), axis=0)
            dual = rho * np.max(np.abs(Sigma.T @ (Za - Z_old)), axis=0)
            done = (pri <= tol_primal) & (dual <= tol_dual)
            # an infeasible column's primal residual plateaus at a positive
            # level; give up on it once it stops improving for a long stretch
            improved = pri < 0.99 * best_pri
            stalled_for = np.where(improved, 0, stalled_for + _CHECK_EVERY)
            best_pri = np.minimum(best_pri, pri)
            stalled = (stalled_for >= _STALL_ITERS) & (pri > tol_primal)
            # a stable support signature is the cue that the vertex has been
            # identified; polish exactly once per newly stabilized pattern
            signs = np.sign(Xa) * (np.abs(Xa) > 1e-10 * np.maximum(np.max(np.abs(Xa), axis=0), 1e-300))
            finished = []
            for k in range(cols.size):
                sig = signs[:, k].astype(np.int8).tobytes()
                stable = sig == prev_sig[k] and sig != failed_sig[k]
                prev_sig[k] = sig
                exiting = done[k] or stalled[k] or it == max_iter or it >= min(_SOFT_CAP, max_iter)
                if not (stable or exiting):
                    continue
                c = cols[k]
                x_k = Xa[:, k]
                polished = _try_polish(Sigma, E[:, c], delta, x_k, rho[k] * Ua[:, k])
                if polished is not None:
                    X[:, c] = polished
                    finished.append(k)
                elif exiting:
                    X[:, c] = x_k
                    if float(np.max(np.abs(Sigma @ x_k - E[:, c]))) > delta + 1e-7:
                        feasible[c] = False
                    finished.append(k)
                else:
                    failed_sig[k] = sig
            if finished:
                keep = np.setdiff1d(np.arange(cols.size), np.array(finished))
                cols = cols[keep]
                Xa, Va, Za, Ua = Xa[:, keep], Va[:, keep], Za[:, keep], Ua[:, keep]
                Ea = Ea[:, keep]
                rho, mu = rho[keep], mu[keep]
                best_pri, stalled_for = best_pri[keep], stalled_for[keep]
                prev_sig = [prev_sig[k] for k in keep]
                failed_sig = [failed_sig[k] for k in keep]
                if cols.size == 0:
                    break
                pri, dual = pri[keep], dual[keep]
            # residual balancing, per column (dual rescales with rho)
            if it % 50 == 0 and cols.size:
                grow = pri > 10.0 * np.maximum(dual, 1e-300)
                shrink = dual > 10.0 * np.maximum(pri, 1e-300)
                factor = np.where(grow, 2.0, np.where(shrink, 0.5, 1.0))
                Ua = Ua / factor[None, :]
                rho = rho * factor
                mu = rho * (lam_max**2) * 1.01

    return X, feasible


def clime_column(
    Sigma_hat: np.ndarray,
    j: int,
    delta_n: float,
    max_iter: int = _MAX_ITER,
) -> np.ndarray:
    """Solve the j-th column problem of the constrained-L1 precision program."""
    Sigma_hat = np.asarray(Sigma_hat, dtype=np.float64)
    p = Sigma_hat.shape[0]
    if not (0 <= j < p):
        raise InvalidInputError(f"column index {j} out of range for p={p}")
    e = np.zeros(p)
    e[j] = 1.0
    X, feasible = _solve_columns(Sigma_hat, e, delta_n, max_iter=max_iter)
    if not feasible[0]:
        raise InvalidInputError(
            f"column {j} is infeasible at delta_n={delta_n}; no theta satisfies "
            "the max-norm constraint"
        )
    return X[:, 0]


def clime(Sigma_hat: np.ndarray, delta_n: float, max_iter: int = _MAX_ITER) -> PrecisionEstimate:
    """Row-wise constrained-L1 precision estimate with min-magnitude symmetrization.

    Infeasible columns (possible only for degenerate Sigma_hat) come back as
    zero rows flagged in `feasible` rather than raising, so a single bad
    coordinate does not abort a full experiment.
    """
    Sigma_hat = np.asarray(Sigma_hat, dtype=np.float64)
    p = Sigma_hat.shape[0]
    X, feasible = _solve_columns(Sigma_hat, np.eye(p), delta_n, max_iter=max_iter)
    theta_raw = X.T  # row j solves the j-th column problem
    Theta = symmetrize_min_magnitude(theta_raw)
    return PrecisionEstimate(
        Theta=Theta,
        delta_n=float(delta_n),
        feasible=feasible,
        Sigma_u_hat=Sigma_hat,
        theta_raw=theta_raw,
    )


def default_delta(n: int, p: int) -> float:
    """Rate-matching default 2 * sqrt(log(p)/n)."""
    return 2.0 * float(np.sqrt(np.log(p) / n))


def select_delta(
    U_hat: np.ndarray,
    grid: Optional[np.ndarray] = None,
    folds: int = 5,
    seed: SeedSpec = SeedSpec(0),
) -> float:
    """Constraint level for the precision program.

    Without a grid, returns the closed-form default.  With a grid,
    cross-validates ||Theta(delta) Sigma_holdout - I||_max over row folds
    (contiguous blocks of a seeded permutation), breaking ties toward the
    larger delta.
    """
    U = np.asarray(U_hat, dtype=np.float64)
    n, p = U.shape
    if grid is None:
        return default_delta(n, p)
    grid = np.sort(np.asarray(grid, dtype=np.float64))[::-1]
    if grid.size == 1:
        return float(grid[0])
    if not (2 <= folds <= n):
        raise InvalidInputError(f"folds must be in [2, n]; got {folds}")
    perm = seed.derive(_DELTA_CV_TAG).rng().permutation(n)
    blocks = np.array_split(perm, folds)
    I_p = np.eye(p)
    scores = np.zeros(grid.size)
    for block in blocks:
        mask = np.ones(n, dtype=bool)
        mask[block] = False
        Sigma_tr = sample_cov_u(U[mask])
        Sigma_ho = sample_cov_u(U[block]) if block.size >= 2 else sample_cov_u(U[mask])
        for g, delta in enumerate(grid):
            est = clime(Sigma_tr, float(delta))
            scores[g] += float(np.max(np.abs(est.Theta @ Sigma_ho - I_p)))
    return float(grid[int(np.argmin(scores))])


def default_delta_grid(n: int, p: int, n_points: int = 7) -> np.ndarray:
    """Log-spaced grid around the closed-form default, descending."""
    base = default_delta(n, p)
    return base * np.logspace(0.5, -1.0, n_points)

"""Shared oracles and helpers for the test suite.

Oracles here are deliberately naive: enumeration, dense algebra, double
loops.  They stay independent of the library code paths they check.
"""

import itertools

import numpy as np
import pytest


def vertex_lp_oracle(Sigma, j, delta):
    """Brute-force minimizer of ||theta||_1 s.t. ||Sigma theta - e_j||_inf <= delta.

    Enumerates every basic solution: a subset of coordinates pinned to zero
    plus a matching number of constraint rows tight at +-delta.  Only
    usable for p <= ~5.
    """
    p = Sigma.shape[0]
    e = np.zeros(p)
    e[j] = 1.0
    best, best_obj = None, np.inf
    coords = list(range(p))
    if np.max(np.abs(e)) <= delta + 1e-12:
        best, best_obj = np.zeros(p), 0.0
    for k in range(p):
        for Z in itertools.combinations(coords, k):
            free = [c for c in coords if c not in Z]
            for T in itertools.combinations(coords, len(free)):
                M = Sigma[np.ix_(T, free)]
                if abs(np.linalg.det(M)) < 1e-12:
                    continue
                for signs in itertools.product([-1.0, 1.0], repeat=len(T)):
                    rhs = e[list(T)] + delta * np.asarray(signs)
                    cand = np.zeros(p)
                    cand[free] = np.linalg.solve(M, rhs)
                    if np.max(np.abs(Sigma @ cand - e)) <= delta + 1e-9:
                        obj = np.sum(np.abs(cand))
                        if obj < best_obj - 1e-15:
                            best, best_obj = cand, obj
    return best, best_obj


def m_hat_naive(U, Y):
    """O(n^2 p) double-loop version of the bootstrap centering term."""
    n, p = U.shape
    Fn = np.array([np.mean(Y <= y) for y in Y])
    out = np.zeros((n, p))
    for i in range(n):
        for j in range(p):
            acc = 0.0
            for k in range(n):
                acc += U[k, j] * ((1.0 if Y[k] >= Y[i] else 0.0) - Fn[k])
            out[i, j] = acc / n
    return out


def ista_lasso_oracle(U, y, lam, iters=40_000):
    """Proximal (sub)gradient descent on the lasso objective.

    First-order and full-gradient, hence algorithmically independent of
    coordinate descent; enough iterations drive the objective gap well
    below 1e-9 on the tiny instances it is used for.
    """
    n, p = U.shape
    L = np.linalg.norm(U, 2) ** 2 / n  # Lipschitz constant of the smooth part
    step = 1.0 / max(L, 1e-12)
    beta = np.zeros(p)
    for _ in range(iters):
        grad = U.T @ (U @ beta - y) / n
        beta = beta - step * grad
        beta = np.sign(beta) * np.maximum(np.abs(beta) - step * lam, 0.0)
    return beta


def lasso_objective(U, y, beta, lam):
    r = y - U @ beta
    return 0.5 * (r @ r) / U.shape[0] + lam * np.sum(np.abs(beta))


def kkt_violation(U, y, beta, lam):
    """Max violation of the lasso stationarity conditions."""
    g = U.T @ (y - U @ beta) / U.shape[0]
    viol = 0.0
    for j in range(beta.size):
        if beta[j] != 0.0:
            viol = max(viol, abs(g[j] - lam * np.sign(beta[j])))
        else:
            viol = max(viol, max(abs(g[j]) - lam, 0.0))
    return viol


def norm_quantile_bisect(prob, tol=1e-13):
    """Inverse normal CDF by bisection on the error function.

    Bisects the survival function on whichever tail is smaller so the
    comparison never hits 1 - tiny cancellation.
    """
    import math

    if prob > 0.5:
        return -norm_quantile_bisect(1.0 - prob, tol)
    lo, hi = -42.0, 0.5
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        # for mid <= 0 the erfc argument is nonnegative: no cancellation
        if 0.5 * math.erfc(-mid / math.sqrt(2.0)) < prob:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)

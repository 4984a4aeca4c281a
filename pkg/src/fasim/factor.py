"""Latent-factor estimation by spectral decomposition of the Gram matrix.

The factors solve the constrained least squares problem
``min ||X - F B'||_F  s.t.  F'F/n = I_K, B'B diagonal``: columns of
F_hat/sqrt(n) are the top-K eigenvectors of XX', B_hat = X'F_hat/n, and
U_hat = X - F_hat B_hat' is the idiosyncratic part.  Working on the n x n
Gram matrix (not the p x p covariance) is the cheap side when p >= n.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateInputError, InvalidInputError, RankDeficiencyError

#: Relative floor under which an eigenvalue is treated as numerically zero.
EIGENVALUE_FLOOR = 1e-12


def default_k_max(n: int) -> int:
    """Default upper bound for the factor count search: min(n//2, 15)."""
    return max(1, min(n // 2, 15))


@dataclass(frozen=True)
class FactorDecomposition:
    """Estimated factors, loadings, idiosyncratic parts, and the spectrum used.

    Satisfies F_hat'F_hat/n = I_K, F_hat'U_hat = 0 and B_hat'B_hat diagonal
    up to floating-point roundoff; U_hat = X - F_hat B_hat' by construction.
    """

    F_hat: np.ndarray  # (n, K), sqrt(n)-scaled eigenvectors
    B_hat: np.ndarray  # (p, K)
    U_hat: np.ndarray  # (n, p)
    K: int
    eigenvalues: np.ndarray  # leading eigenvalues of XX', nonincreasing

    @property
    def n(self) -> int:
        return self.F_hat.shape[0]

    @property
    def p(self) -> int:
        return self.B_hat.shape[0]


def _gram_eigen(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of XX', eigenvalues nonincreasing."""
    G = X @ X.T
    evals, evecs = np.linalg.eigh(G)
    order = np.arange(evals.size - 1, -1, -1)
    return evals[order], evecs[:, order]


def _fix_column_signs(F: np.ndarray, B: np.ndarray) -> None:
    # Largest-magnitude entry of each factor column made nonnegative; the
    # matching loading column flips with it so F B' is unchanged.
    for k in range(F.shape[1]):
        j = int(np.argmax(np.abs(F[:, k])))
        if F[j, k] < 0:
            F[:, k] = -F[:, k]
            B[:, k] = -B[:, k]


def _order_tied_columns(evals: np.ndarray, F: np.ndarray, B: np.ndarray) -> None:
    # Under exact eigenvalue ties, order tied columns by the first index of
    # their largest-magnitude entry so output is deterministic.
    k = 0
    K = F.shape[1]
    while k < K:
        m = k
        while m + 1 < K and evals[m + 1] == evals[k]:
            m += 1
        if m > k:
            anchors = [int(np.argmax(np.abs(F[:, c]))) for c in range(k, m + 1)]
            perm = np.argsort(anchors, kind="stable") + k
            F[:, k : m + 1] = F[:, perm]
            B[:, k : m + 1] = B[:, perm]
        k = m + 1


def select_num_factors(X: np.ndarray, K_max: int | None = None) -> int:
    """Eigenvalue-ratio estimate of the number of factors.

    Returns argmax over k in 1..K_max of lambda_k / lambda_{k+1} for the
    Gram spectrum, clamping eigenvalues below ``EIGENVALUE_FLOOR * lambda_1``
    so the ratio never divides by zero.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if K_max is None:
        K_max = default_k_max(n)
    if not (1 <= K_max <= n - 1):
        raise InvalidInputError(f"K_max must be in [1, n-1]; got {K_max} with n={n}")
    evals, _ = _gram_eigen(X)
    lam1 = evals[0]
    if not np.isfinite(lam1) or lam1 <= n * X.shape[1] * 1e-30:
        raise DegenerateInputError("all Gram eigenvalues are numerically zero")
    lam = np.maximum(evals[: K_max + 1], EIGENVALUE_FLOOR * lam1)
    ratios = lam[:-1] / lam[1:]
    return int(np.argmax(ratios)) + 1


def fit_factors(X: np.ndarray, K: int, n_eigenvalues: int | None = None) -> FactorDecomposition:
    """Extract K factors from a column-centered matrix X.

    ``n_eigenvalues`` controls how much of the spectrum is recorded in the
    result (defaults to min(n, K+1)).
    """
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    if not (1 <= K <= min(n - 1, p)):
        raise InvalidInputError(f"K must be in [1, min(n-1, p)]; got K={K}, n={n}, p={p}")
    evals, evecs = _gram_eigen(X)
    lam1 = evals[0]
    if not np.isfinite(lam1) or lam1 <= n * p * 1e-30:
        raise DegenerateInputError("all Gram eigenvalues are numerically zero")
    floor = EIGENVALUE_FLOOR * lam1
    for k in range(K):
        if evals[k] <= floor:
            raise RankDeficiencyError(index=k + 1, eigenvalue=float(evals[k]))
    F = np.sqrt(n) * evecs[:, :K].copy()
    B = X.T @ F / n
    _order_tied_columns(evals[:K], F, B)
    _fix_column_signs(F, B)
    U = X - F @ B.T
    m = min(n, (K + 1) if n_eigenvalues is None else n_eigenvalues)
    return FactorDecomposition(
        F_hat=F, B_hat=B, U_hat=U, K=K, eigenvalues=evals[:m].copy()
    )

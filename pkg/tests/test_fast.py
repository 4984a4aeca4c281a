import numpy as np
import pytest
from conftest import m_hat_naive

from fasim import (
    Dataset,
    InconsistentFactorsError,
    InvalidInputError,
    SeedSpec,
    TransformedResponse,
    center_columns,
    fast_statistic,
    fast_test,
    fit_factors,
    gamma_ls,
    m_hat_matrix,
    multiplier_bootstrap,
    rank_transform,
    score_matrix,
)
from fasim.factor import FactorDecomposition
from fasim.fast import ScoreMatrix


def _orthonormal_factors(rng, n, K):
    q, _ = np.linalg.qr(rng.normal(size=(n, K)))
    return np.sqrt(n) * q


def _fake_h(values):
    values = np.asarray(values, dtype=np.float64)
    return TransformedResponse(values=values, ranks=np.zeros(values.size, dtype=np.int64))


class TestGammaLs:
    def test_exact_fit(self, rng):
        F = _orthonormal_factors(rng, 12, 2)
        c = np.array([0.7, -1.2])
        assert np.allclose(gamma_ls(F, _fake_h(F @ c)), c, atol=1e-10)

    def test_orthogonal_response(self, rng):
        F = _orthonormal_factors(rng, 10, 2)
        h = rng.normal(size=10)
        h -= F @ (F.T @ h) / 10
        assert np.allclose(gamma_ls(F, _fake_h(h)), 0, atol=1e-10)

    def test_matches_normal_equations_oracle(self, rng):
        F = _orthonormal_factors(rng, 10, 2)
        h = rng.normal(size=10)
        oracle = np.linalg.solve(F.T @ F, F.T @ h)
        assert np.allclose(gamma_ls(F, _fake_h(h)), oracle, atol=1e-10)

    def test_raises_on_bad_scaling(self, rng):
        F = rng.normal(size=(10, 2)) * 3
        with pytest.raises(InconsistentFactorsError):
            gamma_ls(F, _fake_h(rng.normal(size=10)))


def _fabricate_fd(F, U):
    n, K = F.shape
    return FactorDecomposition(
        F_hat=F, B_hat=np.zeros((U.shape[1], K)), U_hat=U, K=K,
        eigenvalues=np.ones(K + 1),
    )


class TestFastStatistic:
    def test_zero_idiosyncratic_column(self, rng):
        F = _orthonormal_factors(rng, 8, 1)
        U = rng.normal(size=(8, 3))
        U[:, 1] = 0.0
        T, _ = fast_statistic(_fabricate_fd(F, U), _fake_h(rng.normal(size=8)))
        assert T[1] == 0.0

    def test_factor_spanned_response(self, rng):
        F = _orthonormal_factors(rng, 9, 2)
        U = rng.normal(size=(9, 4))
        T, M = fast_statistic(_fabricate_fd(F, U), _fake_h(F @ np.array([1.0, 2.0])))
        assert M == pytest.approx(0.0, abs=1e-10)

    def test_hand_computed_oracle(self, rng):
        n, p = 5, 2
        F = _orthonormal_factors(rng, n, 1)
        U = rng.normal(size=(n, p))
        h = rng.normal(size=n)
        T, M = fast_statistic(_fabricate_fd(F, U), _fake_h(h))
        # independent arithmetic: explicit loops
        gamma = sum(F[i, 0] * h[i] for i in range(n)) / n
        e = [h[i] - F[i, 0] * gamma for i in range(n)]
        for j in range(p):
            tj = sum(e[i] * U[i, j] for i in range(n)) / np.sqrt(n)
            assert T[j] == pytest.approx(tj, abs=1e-12)
        assert M == pytest.approx(max(abs(t) for t in T), abs=1e-15)


class TestMHat:
    def test_zero_idiosyncratic(self, rng):
        F = _orthonormal_factors(rng, 6, 1)
        fd = _fabricate_fd(F, np.zeros((6, 3)))
        assert np.allclose(m_hat_matrix(fd, rng.normal(size=6)), 0)

    def test_single_observation(self):
        fd = _fabricate_fd(np.ones((1, 1)), np.array([[2.0, -1.0]]))
        assert np.allclose(m_hat_matrix(fd, np.array([3.0])), 0)

    def test_four_point_example(self):
        U = np.ones((4, 1))
        fd = _fabricate_fd(2.0 * np.eye(4)[:, :1], U)
        M = m_hat_matrix(fd, np.array([1.0, 2.0, 3.0, 4.0]))
        assert np.allclose(M.ravel(), [0.375, 0.125, -0.125, -0.375])
        assert np.allclose(M, m_hat_naive(U, np.array([1.0, 2.0, 3.0, 4.0])))

    @pytest.mark.parametrize("n,p,ties", [(17, 3, False), (50, 10, False), (30, 4, True)])
    def test_matches_naive_loop(self, rng, n, p, ties):
        U = rng.normal(size=(n, p))
        Y = rng.normal(size=n)
        if ties:
            Y = np.round(Y)  # force duplicated response values
        F = _orthonormal_factors(rng, n, 1)
        fast = m_hat_matrix(_fabricate_fd(F, U), Y)
        assert np.allclose(fast, m_hat_naive(U, Y), atol=1e-10)

    def test_columns_sum_to_zero(self, rng):
        # sum_i 1[Y_k >= Y_i] equals n F_n(Y_k), so every column nets to zero
        U = rng.normal(size=(12, 5))
        F = _orthonormal_factors(rng, 12, 1)
        M = m_hat_matrix(_fabricate_fd(F, U), rng.normal(size=12))
        assert np.allclose(M.sum(axis=0), 0, atol=1e-12)


class TestMultiplierBootstrap:
    def test_quantile_rule_on_known_draws(self):
        # W = [[1]], n = 1: draw b is |multiplier_b|
        W = ScoreMatrix(W=np.array([[1.0]]))
        mult = np.array([[1.0], [2.0], [3.0], [4.0]])
        c, draws = multiplier_bootstrap(W, B=4, alpha=0.25, seed=SeedSpec(0), multipliers=mult)
        assert np.allclose(sorted(draws), [1, 2, 3, 4])
        assert c == 3.0

    def test_zero_scores(self):
        W = ScoreMatrix(W=np.zeros((5, 3)))
        c, draws = multiplier_bootstrap(W, B=10, alpha=0.1, seed=SeedSpec(0))
        assert c == 0.0 and np.allclose(draws, 0)

    def test_hand_computed_draw(self, rng):
        W = ScoreMatrix(W=rng.normal(size=(3, 2)))
        N = np.array([[0.5, -1.0, 2.0]])
        c, draws = multiplier_bootstrap(W, B=1, alpha=0.5, seed=SeedSpec(0), multipliers=N)
        expected = np.max(np.abs(W.W.T @ N[0])) / np.sqrt(3)
        assert draws[0] == pytest.approx(expected, abs=1e-12)

    def test_deterministic_across_calls(self, rng):
        W = ScoreMatrix(W=rng.normal(size=(6, 4)))
        c1, d1 = multiplier_bootstrap(W, B=50, alpha=0.1, seed=SeedSpec(3, 7))
        c2, d2 = multiplier_bootstrap(W, B=50, alpha=0.1, seed=SeedSpec(3, 7))
        assert c1 == c2 and np.array_equal(d1, d2)

    def test_validation(self, rng):
        W = ScoreMatrix(W=rng.normal(size=(4, 2)))
        with pytest.raises(InvalidInputError):
            multiplier_bootstrap(W, B=0, alpha=0.1, seed=SeedSpec(0))
        with pytest.raises(InvalidInputError):
            multiplier_bootstrap(W, B=10, alpha=0.0, seed=SeedSpec(0))
        with pytest.raises(InvalidInputError):
            multiplier_bootstrap(W, B=10, alpha=1.2, seed=SeedSpec(0))


def _spanned_response_dataset(rng, n=40, p=12):
    """Dataset where the score statistic vanishes identically.

    The dominant factor is the centered rank shape, so h(Y) decomposes into
    that factor plus a constant; with both the fitted factor and the
    idiosyncratic columns orthogonal to the constant vector, T_n = 0.
    """
    v = (np.arange(1, n + 1) / n) - 0.5
    f1 = v - v.mean()
    f1 = f1 / np.sqrt(np.mean(f1**2))  # increasing, centered, f'f/n = 1
    f2 = rng.normal(size=n)
    f2 -= f2.mean()
    f2 -= f1 * (f1 @ f2) / (f1 @ f1)  # centered and orthogonal to f1
    b1 = 10.0 * rng.uniform(0.5, 1.0, size=p)  # dominant loading
    b2 = 0.1 * rng.normal(size=p)
    b2 -= b1 * (b1 @ b2) / (b1 @ b1)  # orthogonal loadings: factors stay exact
    X = np.outer(f1, b1) + np.outer(f2, b2)
    Y = f1  # strictly increasing, so the ranks align with f1
    return Dataset(X=X, Y=Y)


class TestFastTest:
    def test_factor_spanned_never_rejects(self, rng):
        ds = _spanned_response_dataset(rng)
        res = fast_test(ds, K=1, B=100, alpha=0.2, seed=SeedSpec(5))
        assert res.M_n <= 1e-10
        assert not res.reject

    def test_monotone_response_invariance(self, rng):
        n, p = 50, 20
        X = rng.normal(size=(n, p))
        Y = rng.normal(size=n)
        a = fast_test(Dataset(X=X, Y=Y), K=2, B=60, seed=SeedSpec(9))
        b = fast_test(Dataset(X=X, Y=np.exp(Y)), K=2, B=60, seed=SeedSpec(9))
        assert a.M_n == b.M_n
        assert a.critical_value == b.critical_value
        assert a.p_value == b.p_value
        assert np.array_equal(a.T_n, b.T_n)

    def test_result_invariants(self, rng):
        X = rng.normal(size=(30, 8))
        Y = rng.normal(size=30)
        res = fast_test(Dataset(X=X, Y=Y), K=1, B=99, seed=SeedSpec(1))
        assert res.M_n == np.max(np.abs(res.T_n))
        assert res.reject == (res.M_n >= res.critical_value)
        assert 0 < res.p_value <= 1

    def test_score_matrix_first_summand_reproduces_statistic(self, rng):
        n, p = 25, 6
        X = rng.normal(size=(n, p))
        Y = rng.normal(size=n)
        Xc, _ = center_columns(X)
        fd = fit_factors(Xc, 2)
        h = rank_transform(Y)
        T, _ = fast_statistic(fd, h)
        W = score_matrix(fd, h, Y)
        first = W.W - m_hat_matrix(fd, Y)
        assert np.allclose(first.sum(axis=0) / np.sqrt(n), T, atol=1e-10)

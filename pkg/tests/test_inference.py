import numpy as np
import pytest
from conftest import norm_quantile_bisect

from fasim import (
    Dataset,
    InvalidInputError,
    SeedSpec,
    center_columns,
    confidence_intervals,
    debias,
    fit_factors,
    fit_fasim,
    infer_fasim,
    m_hat_matrix,
    norm_quantile,
    rank_transform,
    sample_cov_u,
    sandwich_sd,
)
from fasim.estimate import PenalizedFit, project_response
from fasim.inference import InferenceConfig, residuals_debias
from fasim.simulate import DgpConfig, NoiseSpec, generate


class TestNormQuantile:
    def test_reference_values(self):
        assert norm_quantile(0.975) == pytest.approx(1.959964, abs=5e-7)
        assert norm_quantile(0.84) == pytest.approx(0.994458, abs=5e-7)

    def test_against_bisection_oracle(self):
        for p in (1e-8, 0.001, 0.025, 0.2, 0.5, 0.7, 0.95, 0.999, 1 - 1e-9):
            assert norm_quantile(p) == pytest.approx(norm_quantile_bisect(p), abs=1e-10)

    def test_symmetry(self):
        for p in (0.01, 0.3, 0.45):
            assert norm_quantile(p) == pytest.approx(-norm_quantile(1 - p), abs=1e-12)

    def test_domain(self):
        with pytest.raises(InvalidInputError):
            norm_quantile(0.0)
        with pytest.raises(InvalidInputError):
            norm_quantile(1.0)


class TestConfidenceIntervals:
    def test_reference_example(self):
        lo, hi = confidence_intervals(np.array([0.5]), np.array([1.0]), 100, 0.05)
        assert lo[0] == pytest.approx(0.3040, abs=5e-5)
        assert hi[0] == pytest.approx(0.6960, abs=5e-5)

    def test_degenerate_sd(self):
        lo, hi = confidence_intervals(np.array([0.7]), np.array([0.0]), 50, 0.05)
        assert lo[0] == hi[0] == 0.7

    def test_width_formula_exact(self, rng):
        beta = rng.normal(size=6)
        sd = np.abs(rng.normal(size=6))
        lo, hi = confidence_intervals(beta, sd, 37, 0.1)
        z = norm_quantile(0.95)
        assert np.allclose(hi - lo, 2 * sd * z / np.sqrt(37), atol=1e-14)

    def test_nesting(self, rng):
        beta = rng.normal(size=5)
        sd = np.abs(rng.normal(size=5)) + 0.1
        lo1, hi1 = confidence_intervals(beta, sd, 64, 0.01)
        lo5, hi5 = confidence_intervals(beta, sd, 64, 0.05)
        assert np.all(lo1 <= lo5) and np.all(hi5 <= hi1)


def _pipeline_pieces(rng, n=30, p=5, K=1, lam=0.05):
    cfg = DgpConfig(n=n, p=p, K=K, s=2, omega=0.5, gamma=(0.5,) * K,
                    u_dist="iid_normal", noise=NoiseSpec("gaussian", 0.25),
                    seed=SeedSpec(int(rng.integers(1 << 30))))
    ds, _ = generate(cfg)
    Xc, _ = center_columns(ds.X)
    fd = fit_factors(Xc, K)
    h = rank_transform(ds.Y)
    fit = fit_fasim(ds, K=K, lam=lam)
    return ds, fd, h, fit


class TestDebias:
    def test_one_step_exactness_with_exact_inverse(self, rng):
        # full-rank hook: fabricate a decomposition with U'U/n invertible
        # (pipeline U_hat always loses rank K to the factor projection)
        n, p, K = 40, 6, 1
        q, _ = np.linalg.qr(rng.normal(size=(n, p + K)))
        F = np.sqrt(n) * q[:, :K]
        U = rng.normal(size=(p, p)) @ q[:, K:].T * np.sqrt(n)
        U = U.T
        from test_fast import _fabricate_fd, _fake_h

        fd = _fabricate_fd(F, U)
        h = _fake_h(rng.uniform(-0.5, 0.5, size=n))
        from fasim import lasso_fit

        h_tilde = project_response(fd, h)
        res = lasso_fit(U, h_tilde, 0.05)
        fit = PenalizedFit(
            beta_hat=res.beta, gamma_hat=F.T @ h.values / n, lam=0.05,
            projected_h=h_tilde, objective=res.objective, n_iter=res.n_sweeps,
            converged=res.converged,
        )
        Theta = np.linalg.inv(sample_cov_u(U))
        beta_tilde = debias(fit, fd, h, Theta)
        ls = np.linalg.solve(U.T @ U, U.T @ h_tilde)
        assert np.allclose(beta_tilde, ls, atol=1e-8)

    def test_one_step_reaches_least_squares_on_pipeline(self, rng):
        # with the pipeline's rank-deficient U_hat, the pseudo-inverse hook
        # still lands the debiased point on a least-squares minimizer
        ds, fd, h, fit = _pipeline_pieces(rng, n=40, p=6)
        Theta = np.linalg.pinv(sample_cov_u(fd.U_hat))
        beta_tilde = debias(fit, fd, h, Theta)
        grad = fd.U_hat.T @ (project_response(fd, h) - fd.U_hat @ beta_tilde)
        assert np.max(np.abs(grad)) / 40 < 1e-8

    def test_fixed_point_at_least_squares(self, rng):
        ds, fd, h, _ = _pipeline_pieces(rng, n=40, p=6)
        h_tilde = project_response(fd, h)
        ls, *_ = np.linalg.lstsq(fd.U_hat, h_tilde, rcond=None)
        fit = PenalizedFit(
            beta_hat=ls, gamma_hat=np.zeros(fd.K), lam=0.01,
            projected_h=h_tilde, objective=0.0, n_iter=1, converged=True,
        )
        beta_tilde = debias(fit, fd, h, np.eye(6))
        assert np.allclose(beta_tilde, ls, atol=1e-10)

    def test_dense_algebra_oracle(self, rng):
        ds, fd, h, fit = _pipeline_pieces(rng, n=30, p=5)
        Theta = rng.normal(size=(5, 5))
        got = debias(fit, fd, h, Theta)
        # independent arithmetic with explicit loops
        n = 30
        r = [h.values[i] - sum(fd.U_hat[i, k] * fit.beta_hat[k] for k in range(5))
             for i in range(n)]
        for j in range(5):
            corr = sum(
                Theta[j, k] * sum(fd.U_hat[i, k] * r[i] for i in range(n))
                for k in range(5)
            ) / n
            assert got[j] == pytest.approx(fit.beta_hat[j] + corr, abs=1e-10)

    def test_verbatim_equals_projected_form(self, rng):
        # the raw response differs from the projected one by a factor-space
        # component, which U' annihilates by construction
        ds, fd, h, fit = _pipeline_pieces(rng, n=50, p=8, K=2)
        Theta = np.eye(8)
        raw = debias(fit, fd, h, Theta)
        r_proj = fit.projected_h - fd.U_hat @ fit.beta_hat
        projected = fit.beta_hat + Theta @ (fd.U_hat.T @ r_proj) / 50
        assert np.allclose(raw, projected, atol=1e-10)


class TestSandwichSd:
    def test_zero_scores(self, rng):
        ds, fd, h, fit = _pipeline_pieces(rng, n=30, p=5)
        zero_fit = PenalizedFit(
            beta_hat=np.zeros(5), gamma_hat=fit.gamma_hat, lam=fit.lam,
            projected_h=np.zeros(30), objective=0.0, n_iter=1, converged=True,
        )
        sd = sandwich_sd(fd, zero_fit, np.eye(5), np.zeros((30, 5)))
        assert np.allclose(sd, 0)

    def test_identity_theta_gives_column_rms(self, rng):
        ds, fd, h, fit = _pipeline_pieces(rng, n=30, p=5)
        m = m_hat_matrix(fd, ds.Y)
        sd = sandwich_sd(fd, fit, np.eye(5), m)
        e = residuals_debias(fit, fd)
        W = fd.U_hat * e[:, None] + m
        assert np.allclose(sd, np.sqrt(np.mean(W**2, axis=0)), atol=1e-12)

    def test_matches_explicit_sigma_tilde(self, rng):
        ds, fd, h, fit = _pipeline_pieces(rng, n=10, p=4, lam=0.1)
        m = m_hat_matrix(fd, ds.Y)
        Theta = rng.normal(size=(4, 4))
        sd = sandwich_sd(fd, fit, Theta, m)
        e = residuals_debias(fit, fd)
        W = fd.U_hat * e[:, None] + m
        Sigma_tilde = W.T @ W / 10  # explicit p x p oracle
        for j in range(4):
            v = Theta[j] @ Sigma_tilde @ Theta[j]
            assert sd[j] == pytest.approx(np.sqrt(v), abs=1e-12)

    def test_nonnegative(self, rng):
        ds, fd, h, fit = _pipeline_pieces(rng, n=25, p=6)
        sd = sandwich_sd(fd, fit, np.eye(6), m_hat_matrix(fd, ds.Y))
        assert np.all(sd >= 0)


class TestInferFasim:
    def test_null_signal_covers_zero(self):
        cfg = DgpConfig(n=120, p=30, omega=0.0, u_dist="iid_normal",
                        noise=NoiseSpec("gaussian", 0.25), seed=SeedSpec(21))
        ds, _ = generate(cfg)
        res = infer_fasim(ds, InferenceConfig(K=2, lam=1.0, seed=SeedSpec(2)))
        frac = np.mean((res.ci_lower <= 0) & (0 <= res.ci_upper))
        assert np.max(np.abs(res.beta_tilde)) < 0.2
        assert frac >= 0.85

    def test_invariants(self):
        cfg = DgpConfig(n=80, p=20, omega=0.5, u_dist="iid_normal",
                        noise=NoiseSpec("gaussian", 0.25), seed=SeedSpec(33))
        ds, _ = generate(cfg)
        res = infer_fasim(ds, InferenceConfig(K=2, seed=SeedSpec(3)))
        z = norm_quantile(1 - res.alpha / 2)
        assert np.allclose(res.ci_lower, res.beta_tilde - res.sigma_z * z / np.sqrt(80), atol=1e-12)
        assert np.allclose(res.ci_upper, res.beta_tilde + res.sigma_z * z / np.sqrt(80), atol=1e-12)
        assert np.all(res.sigma_z >= 0)
        assert res.residuals_tilde.shape == (80,)

    def test_rank_invariance(self):
        cfg = DgpConfig(n=60, p=15, omega=0.5, u_dist="iid_normal",
                        noise=NoiseSpec("gaussian", 1.0), seed=SeedSpec(44))
        ds, _ = generate(cfg)
        a = infer_fasim(ds, InferenceConfig(K=2, seed=SeedSpec(4)))
        ds2 = Dataset(X=ds.X, Y=np.exp(ds.Y))
        b = infer_fasim(ds2, InferenceConfig(K=2, seed=SeedSpec(4)))
        assert np.array_equal(a.beta_tilde, b.beta_tilde)
        assert np.array_equal(a.ci_lower, b.ci_lower)
        assert np.array_equal(a.ci_upper, b.ci_upper)

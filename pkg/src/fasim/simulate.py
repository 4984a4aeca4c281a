"""Data-generating processes, the Monte Carlo oracle for the transform-scale
coefficients, and the desk-scale experiment drivers (size/power, estimation
error, interval coverage).

Replications run in parallel worker threads with BLAS pinned to one thread
per worker; every replication derives its own seed with stream_id equal to
the replication index, so reports are identical under any schedule or
worker count.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from ._parallel import parallel_map
from .core_data import Dataset, SeedSpec
from .estimate import fit_fasim
from .exceptions import InvalidInputError
from .fast import fast_test
from .inference import InferenceConfig, infer_fasim

_DATA_TAG = 0xDA7A
_OUTLIER_TAG = 0x0071
_ORACLE_TAG = 0x0AC1
_TEST_TAG = 0x7E57
_FIT_TAG = 0xF17
_INFER_TAG = 0x1FE2

#: Scale c in the coverage experiments' constraint level c * sqrt(log(p)/n).
#: Calibrated once against the reported coverage/length table; the rate is
#: the theory-mandated part, the constant is a tuning choice.  Below ~0.8
#: the constraint set goes empty for many columns once p > n (the sample
#: covariance is rank-deficient), so small scales are not usable there.
COVERAGE_DELTA_SCALE = 1.0


@dataclass(frozen=True)
class NoiseSpec:
    """Error law: gaussian(variance), uniform(half_width), or student_t(df)."""

    kind: str
    param: float

    _KINDS = ("gaussian", "uniform", "student_t")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise InvalidInputError(f"noise kind must be one of {self._KINDS}")
        if self.kind == "student_t":
            if self.param <= 0:
                raise InvalidInputError("student_t degrees of freedom must be positive")
        elif self.param < 0:
            raise InvalidInputError("noise parameter must be nonnegative")

    @classmethod
    def parse(cls, text: str) -> "NoiseSpec":
        """Parse 'gaussian:0.25', 'uniform:1.5', 't:3' / 'student_t:3'."""
        try:
            kind, raw = text.split(":")
            param = float(raw)
        except ValueError:
            raise InvalidInputError(f"cannot parse noise spec {text!r}") from None
        kind = {"t": "student_t"}.get(kind, kind)
        return cls(kind=kind, param=param)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.normal(0.0, math.sqrt(self.param), n) if self.param > 0 else np.zeros(n)
        if self.kind == "uniform":
            return rng.uniform(-self.param, self.param, n) if self.param > 0 else np.zeros(n)
        return rng.standard_t(self.param, n)

    def label(self) -> str:
        return f"{self.kind}:{self.param:g}"


@dataclass(frozen=True)
class OutlierSpec:
    fraction: float
    multiplier: float

    def __post_init__(self):
        if not (0.0 <= self.fraction <= 1.0):
            raise InvalidInputError("outlier fraction must be in [0, 1]")
        if self.multiplier < 0:
            raise InvalidInputError("outlier multiplier must be >= 0")


@dataclass(frozen=True)
class DgpConfig:
    """One simulated-data scenario.

    The linear model draws Y = u'beta + f'gamma + eps; the nonlinear one
    exponentiates that sum.  beta is omega on the first s coordinates and
    zero elsewhere.  Factors come from an i.i.d. standard normal or the
    AR(1) recursion with coefficient matrix 0.4^{|i-j|+1}; idiosyncratic
    rows are either Toeplitz-correlated (0.5^{|i-j|}, the testing setup) or
    i.i.d. standard normal (the estimation/coverage setup).
    """

    model: str = "linear"
    n: int = 200
    p: int = 200
    K: int = 2
    s: int = 3
    omega: float = 0.5
    gamma: tuple[float, ...] = (0.5, 0.5)
    factor_case: str = "iid_normal"
    noise: NoiseSpec = NoiseSpec("gaussian", 0.25)
    u_dist: str = "toeplitz"
    toeplitz_rho: float = 0.5
    outliers: Optional[OutlierSpec] = None
    seed: SeedSpec = SeedSpec(0)

    def __post_init__(self):
        if self.model not in ("linear", "nonlinear"):
            raise InvalidInputError("model must be 'linear' or 'nonlinear'")
        if self.factor_case not in ("iid_normal", "ar1"):
            raise InvalidInputError("factor_case must be 'iid_normal' or 'ar1'")
        if self.u_dist not in ("toeplitz", "iid_normal"):
            raise InvalidInputError("u_dist must be 'toeplitz' or 'iid_normal'")
        if len(self.gamma) != self.K:
            raise InvalidInputError(f"gamma must have length K={self.K}")
        if not (0 <= self.s <= self.p):
            raise InvalidInputError("s must lie in [0, p]")

    def beta(self) -> np.ndarray:
        b = np.zeros(self.p)
        b[: self.s] = self.omega
        return b

    def label(self) -> str:
        parts = [
            f"model={self.model}",
            f"n={self.n}",
            f"p={self.p}",
            f"K={self.K}",
            f"s={self.s}",
            f"omega={self.omega:g}",
            f"factors={self.factor_case}",
            f"noise={self.noise.label()}",
            f"u={self.u_dist}",
        ]
        if self.outliers is not None:
            parts.append(
                f"outliers={self.outliers.fraction:g}+{self.outliers.multiplier:g}*max"
            )
        return ",".join(parts)


def toeplitz_sigma(p: int, rho: float) -> np.ndarray:
    """Covariance rho^{|i-j|}."""
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def toeplitz_sigma_inv(p: int, rho: float) -> np.ndarray:
    """Closed-form tridiagonal inverse of the AR(1) covariance."""
    if p == 1:
        return np.array([[1.0]])
    T = np.zeros((p, p))
    d = 1.0 / (1.0 - rho**2)
    np.fill_diagonal(T, (1.0 + rho**2) * d)
    T[0, 0] = T[-1, -1] = d
    off = -rho * d
    i = np.arange(p - 1)
    T[i, i + 1] = off
    T[i + 1, i] = off
    return T


def ar1_phi(K: int) -> np.ndarray:
    """Factor AR(1) coefficient matrix 0.4^{|i-j|+1}."""
    idx = np.arange(K)
    return 0.4 ** (np.abs(idx[:, None] - idx[None, :]) + 1)


def _draw_factors(cfg: DgpConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    if cfg.factor_case == "iid_normal":
        return rng.standard_normal((n, cfg.K))
    Phi = ar1_phi(cfg.K)
    F = np.empty((n, cfg.K))
    F[0] = rng.standard_normal(cfg.K)
    innovations = rng.standard_normal((n - 1, cfg.K))
    for i in range(1, n):
        F[i] = Phi @ F[i - 1] + innovations[i - 1]
    return F


def _draw_idiosyncratic(cfg: DgpConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    Z = rng.standard_normal((n, cfg.p))
    if cfg.u_dist == "iid_normal":
        return Z
    L = np.linalg.cholesky(toeplitz_sigma(cfg.p, cfg.toeplitz_rho))
    return Z @ L.T


def inject_outliers(
    Y: np.ndarray, fraction: float, multiplier: float, seed: SeedSpec
) -> np.ndarray:
    """Add multiplier * max(Y) to a random floor(fraction*n) subset of entries."""
    if not (0.0 <= fraction <= 1.0):
        raise InvalidInputError("fraction must be in [0, 1]")
    if multiplier < 0:
        raise InvalidInputError("multiplier must be >= 0")
    Y = np.array(Y, dtype=np.float64, copy=True)
    m = int(math.floor(fraction * Y.size))
    if m == 0 or multiplier == 0.0:
        return Y
    rng = seed.derive(_OUTLIER_TAG).rng()
    idx = rng.choice(Y.size, size=m, replace=False)
    Y[idx] += multiplier * np.max(Y)
    return Y


def generate(cfg: DgpConfig) -> tuple[Dataset, dict]:
    """Draw one dataset; returns (Dataset, truth dict with beta/gamma/F/U/B)."""
    rng = cfg.seed.derive(_DATA_TAG).rng()
    n = cfg.n
    F = _draw_factors(cfg, rng, n)
    B = rng.uniform(-1.0, 1.0, (cfg.p, cfg.K))
    U = _draw_idiosyncratic(cfg, rng, n)
    eps = cfg.noise.sample(rng, n)
    beta = cfg.beta()
    gamma = np.asarray(cfg.gamma, dtype=np.float64)
    index = U @ beta + F @ gamma
    Y = index + eps if cfg.model == "linear" else np.exp(index + eps)
    if cfg.outliers is not None:
        Y = inject_outliers(
            Y, cfg.outliers.fraction, cfg.outliers.multiplier, cfg.seed
        )
    X = F @ B.T + U
    ds = Dataset(X=X, Y=Y)
    truth = {"beta": beta, "gamma": gamma, "F": F, "U": U, "B": B}
    return ds, truth


def sigma_u_inverse(cfg: DgpConfig) -> np.ndarray:
    """Analytic inverse of the configured idiosyncratic covariance."""
    if cfg.u_dist == "iid_normal":
        return np.eye(cfg.p)
    return toeplitz_sigma_inv(cfg.p, cfg.toeplitz_rho)


@dataclass(frozen=True)
class OracleBetaH:
    beta_h: np.ndarray
    se: np.ndarray
    n_draws: int


def beta_h_oracle(cfg: DgpConfig, N_mc: int = 1_000_000, chunk: int = 32_768) -> OracleBetaH:
    """Monte Carlo estimate of the population transform-scale coefficients.

    Uses a two-sample scheme: one independent sample builds the empirical
    CDF of Y, a second estimates Cov(u, F(Y) - 1/2); the analytic inverse
    of the configured idiosyncratic covariance then maps the covariance to
    coefficients.  Splitting the samples keeps the CDF estimate independent
    of the covariance draws.
    """
    if N_mc < 2:
        raise InvalidInputError("N_mc must be >= 2")
    beta = cfg.beta()
    gamma = np.asarray(cfg.gamma, dtype=np.float64)

    def draw_chunk(rng: np.random.Generator, m: int) -> tuple[np.ndarray, np.ndarray]:
        u = rng.standard_normal((m, cfg.p))
        if cfg.u_dist == "toeplitz":
            u = u @ _chol(cfg).T
        f = rng.standard_normal((m, cfg.K))
        eps = cfg.noise.sample(rng, m)
        idx = u @ beta + f @ gamma
        Y = idx + eps if cfg.model == "linear" else np.exp(idx + eps)
        return u, Y

    rng_cdf = cfg.seed.derive(_ORACLE_TAG, 1).rng()
    Y_ref = np.empty(N_mc)
    pos = 0
    while pos < N_mc:
        m = min(chunk, N_mc - pos)
        _, Y_ref[pos : pos + m] = draw_chunk(rng_cdf, m)
        pos += m
    Y_ref.sort()

    rng_cov = cfg.seed.derive(_ORACLE_TAG, 2).rng()
    sum_u = np.zeros(cfg.p)
    sum_h = 0.0
    sum_uh = np.zeros(cfg.p)
    sum_uh2 = np.zeros(cfg.p)
    pos = 0
    while pos < N_mc:
        m = min(chunk, N_mc - pos)
        u, Y = draw_chunk(rng_cov, m)
        h = np.searchsorted(Y_ref, Y, side="right") / N_mc - 0.5
        sum_u += u.sum(axis=0)
        sum_h += h.sum()
        prod = u * h[:, None]
        sum_uh += prod.sum(axis=0)
        sum_uh2 += (prod**2).sum(axis=0)
        pos += m
    mean_uh = sum_uh / N_mc
    cov = mean_uh - (sum_u / N_mc) * (sum_h / N_mc)
    var_uh = np.maximum(sum_uh2 / N_mc - mean_uh**2, 0.0)
    Sinv = sigma_u_inverse(cfg)
    beta_h = Sinv @ cov
    se = np.sqrt((Sinv**2) @ (var_uh / N_mc))
    return OracleBetaH(beta_h=beta_h, se=se, n_draws=N_mc)


_CHOL_CACHE: dict[tuple[int, float], np.ndarray] = {}


def _chol(cfg: DgpConfig) -> np.ndarray:
    key = (cfg.p, cfg.toeplitz_rho)
    if key not in _CHOL_CACHE:
        _CHOL_CACHE[key] = np.linalg.cholesky(toeplitz_sigma(cfg.p, cfg.toeplitz_rho))
    return _CHOL_CACHE[key]


@dataclass(frozen=True)
class ReportRow:
    config: str
    metric: str
    value: float
    mc_se: float
    replications: int


@dataclass(frozen=True)
class ExperimentReport:
    rows: tuple[ReportRow, ...]

    def to_csv_lines(self) -> list[str]:
        lines = ["config,metric,value,mc_se,replications"]
        for r in self.rows:
            lines.append(
                f"{r.config},{r.metric},{float(r.value)!r},{float(r.mc_se)!r},"
                f"{r.replications}"
            )
        return lines

    def to_json(self) -> str:
        return json.dumps(
            [
                {
                    "config": r.config,
                    "metric": r.metric,
                    "value": r.value,
                    "mc_se": r.mc_se,
                    "replications": r.replications,
                }
                for r in self.rows
            ]
        )

    def value(self, metric: str, config_substr: str = "") -> float:
        for r in self.rows:
            if r.metric == metric and config_substr in r.config:
                return r.value
        raise KeyError(f"no row with metric={metric!r} config~{config_substr!r}")


def _proportion_se(phat: float, R: int) -> float:
    return math.sqrt(max(phat * (1.0 - phat), 0.0) / R)


def run_size_power(
    omega_grid: Sequence[float],
    cfg: DgpConfig,
    R: int = 200,
    alpha: float = 0.05,
    B: int = 500,
    K: Optional[int] = None,
    threads: Optional[int] = None,
) -> ExperimentReport:
    """Rejection rate of the adequacy test along a signal-strength grid.

    omega = 0 rows estimate the empirical size, positive omega rows the
    empirical power.
    """
    rows = []
    for gi, omega in enumerate(omega_grid):
        base = replace(cfg, omega=float(omega))

        def one(r: int, base=base, gi=gi) -> bool:
            rep_seed = cfg.seed.derive(_TEST_TAG, gi).with_stream(r)
            ds, _ = generate(replace(base, seed=rep_seed))
            res = fast_test(
                ds, K=K, B=B, alpha=alpha, seed=rep_seed.derive(_TEST_TAG)
            )
            return res.reject

        rejects = parallel_map(one, R, threads)
        rate = float(np.mean(rejects))
        rows.append(
            ReportRow(base.label(), "rejection_rate", rate, _proportion_se(rate, R), R)
        )
    return ExperimentReport(rows=tuple(rows))


def n_grid_for_rates(rates: Sequence[float], s: int, p: int) -> list[int]:
    """Sample sizes n such that sqrt(s log(p)/n) hits each requested rate."""
    return [int(round(s * math.log(p) / r**2)) for r in rates]


def run_estimation_error(
    n_grid: Sequence[int],
    cfg: DgpConfig,
    R: int = 200,
    oracle: Optional[OracleBetaH] = None,
    N_mc: int = 1_000_000,
    threads: Optional[int] = None,
) -> ExperimentReport:
    """Relative L1/L2 estimation error against the Monte Carlo oracle.

    A null generator (s = 0 or omega = 0) makes the transform-scale truth
    exactly zero by independence, so absolute rather than relative errors
    are reported there.
    """
    null_truth = cfg.s == 0 or cfg.omega == 0.0
    if oracle is None:
        oracle = (
            OracleBetaH(beta_h=np.zeros(cfg.p), se=np.zeros(cfg.p), n_draws=0)
            if null_truth
            else beta_h_oracle(cfg, N_mc=N_mc)
        )
    beta_h = oracle.beta_h
    norm2 = 0.0 if null_truth else float(np.linalg.norm(beta_h))
    norm1 = 0.0 if null_truth else float(np.sum(np.abs(beta_h)))
    rows = [
        ReportRow(cfg.label(), "oracle_beta_h_max_se", float(np.max(oracle.se)), 0.0, oracle.n_draws)
    ]
    for gi, n in enumerate(n_grid):
        base = replace(cfg, n=int(n))

        def one(r: int, base=base, gi=gi) -> tuple[float, float]:
            rep_seed = cfg.seed.derive(_FIT_TAG, gi).with_stream(r)
            ds, _ = generate(replace(base, seed=rep_seed))
            fit = fit_fasim(ds, seed=rep_seed.derive(_FIT_TAG))
            d = fit.beta_hat - beta_h
            return float(np.linalg.norm(d)), float(np.sum(np.abs(d)))

        errs = np.asarray(parallel_map(one, R, threads))
        label = f"{base.label()},rate={math.sqrt(cfg.s * math.log(cfg.p) / n):.4f}"
        if norm2 > 0:
            l2 = errs[:, 0] / norm2
            l1 = errs[:, 1] / norm1
            rows.append(ReportRow(label, "rel_l2", float(l2.mean()), float(l2.std(ddof=1) / math.sqrt(R)), R))
            rows.append(ReportRow(label, "rel_l1", float(l1.mean()), float(l1.std(ddof=1) / math.sqrt(R)), R))
        else:
            l2 = errs[:, 0]
            rows.append(ReportRow(label, "abs_l2", float(l2.mean()), float(l2.std(ddof=1) / math.sqrt(R)), R))
    return ExperimentReport(rows=tuple(rows))


def coverage_default_delta(n: int, p: int) -> float:
    """Constraint level used by the coverage experiments."""
    return COVERAGE_DELTA_SCALE * math.sqrt(math.log(p) / n)


def run_coverage(
    cfg: DgpConfig,
    R: int = 200,
    alpha: float = 0.05,
    delta: Optional[float] = None,
    lam_scale: float = 1.0,
    oracle: Optional[OracleBetaH] = None,
    N_mc: int = 1_000_000,
    threads: Optional[int] = None,
) -> ExperimentReport:
    """Coverage probability and average length of the per-coordinate intervals.

    Reports the six §-style metrics: all coordinates, the true support, and
    its complement.
    """
    if oracle is None:
        oracle = beta_h_oracle(cfg, N_mc=N_mc)
    beta_h = oracle.beta_h
    if delta is None:
        delta = coverage_default_delta(cfg.n, cfg.p)
    support = np.flatnonzero(cfg.beta() != 0.0)
    comp = np.setdiff1d(np.arange(cfg.p), support)

    def one(r: int) -> np.ndarray:
        rep_seed = cfg.seed.derive(_INFER_TAG).with_stream(r)
        ds, _ = generate(replace(cfg, seed=rep_seed))
        inf_cfg = InferenceConfig(
            delta=delta, alpha=alpha, lam_scale=lam_scale,
            seed=rep_seed.derive(_INFER_TAG),
        )
        res = infer_fasim(ds, inf_cfg)
        covered = (res.ci_lower <= beta_h) & (beta_h <= res.ci_upper)
        length = res.ci_upper - res.ci_lower
        out = [covered.mean(), length.mean()]
        if support.size:
            out += [covered[support].mean(), length[support].mean()]
        else:
            out += [np.nan, np.nan]
        if comp.size:
            out += [covered[comp].mean(), length[comp].mean()]
        else:
            out += [np.nan, np.nan]
        return np.asarray(out)

    stats = np.asarray(parallel_map(one, R, threads))
    label = f"{cfg.label()},delta={delta:.4f},alpha={alpha:g}"
    names = ["CP", "AL", "CP_S", "AL_S", "CP_SC", "AL_SC"]
    rows = [
        ReportRow(
            label,
            "oracle_beta_h_max_se",
            float(np.max(oracle.se)),
            0.0,
            oracle.n_draws,
        )
    ]
    for k, name in enumerate(names):
        col = stats[:, k]
        if np.all(np.isnan(col)):
            continue
        val = float(np.nanmean(col))
        if name.startswith("CP"):
            se = _proportion_se(val, R)
        else:
            se = float(np.nanstd(col, ddof=1) / math.sqrt(R))
        rows.append(ReportRow(label, name, val, se, R))
    return ExperimentReport(rows=tuple(rows))

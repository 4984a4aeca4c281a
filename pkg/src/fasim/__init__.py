"""Factor-augmented single-index modelling.

Pipeline pieces: latent-factor extraction by spectral decomposition, a
rank-based factor-adequacy test with multiplier-bootstrap calibration,
l1-penalized estimation on the estimated idiosyncratic components, and
debiased per-coordinate confidence intervals, plus simulation and
forecasting harnesses.
"""

__version__ = "0.1.0"

from .core_data import (
    Dataset,
    SeedSpec,
    TransformedResponse,
    center_columns,
    load_csv,
    rank_transform,
)
from .estimate import (
    LassoResult,
    PenalizedFit,
    fit_fasim,
    lasso_fit,
    lasso_path,
    project_response,
    select_lambda,
)
from .exceptions import (
    CsvParseError,
    DegenerateInputError,
    FasimError,
    InconsistentFactorsError,
    InvalidInputError,
    RankDeficiencyError,
)
from .factor import FactorDecomposition, fit_factors, select_num_factors
from .fast import (
    FastResult,
    ScoreMatrix,
    fast_statistic,
    fast_test,
    gamma_ls,
    m_hat_matrix,
    multiplier_bootstrap,
    score_matrix,
)
from .forecast import (
    ForecastConfig,
    ForecastReport,
    SplineLink,
    fit_link,
    least_squares_forecast,
    moving_window_forecast,
    oracle_linear_forecast,
)
from .inference import (
    DebiasedInference,
    InferenceConfig,
    confidence_intervals,
    debias,
    infer_fasim,
    norm_quantile,
    sandwich_sd,
)
from .precision import (
    PrecisionEstimate,
    clime,
    clime_column,
    default_delta,
    sample_cov_u,
    select_delta,
    symmetrize_min_magnitude,
)
from .simulate import (
    DgpConfig,
    ExperimentReport,
    NoiseSpec,
    OracleBetaH,
    OutlierSpec,
    beta_h_oracle,
    generate,
    inject_outliers,
    run_coverage,
    run_estimation_error,
    run_size_power,
)

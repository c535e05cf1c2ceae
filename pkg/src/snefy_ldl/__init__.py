"""Conditional density modeling of label distributions on the probability
simplex, with closed-form normalization and moments, maximum-likelihood
training, conformal intervals, entropy-based pool selection, and
density-weighted ensembling."""

__version__ = "0.1.0"

from .core import (
    EPS_FLOOR,
    BoundaryWarning,
    DimensionError,
    DivergenceError,
    FeatureMapParams,
    InvalidDistributionError,
    InvalidLevelError,
    KernelDomainError,
    LdlDataset,
    ModelDegenerateError,
    NumericError,
    SnefyModel,
    floor_normalize,
    is_label_distribution,
    log_uniform_simplex_density,
    make_rng,
    sample_uniform_simplex,
)
from .density import log_density, log_density_batch, normalization_check
from .harness import (
    MetricReport,
    active_learning_round,
    active_select,
    bagging_experiment,
    combine_weighted,
    ensemble_predict,
    entropy_profile,
    ldl_metrics,
    mean_metrics,
)
from .kernel import KernelMatrix, kernel_matrix, log_kernel_entry, unnormalized_squared_norm
from .moments import (
    MomentReport,
    chebyshev_interval,
    conditional_covariance,
    conditional_mean,
    conditional_moments_batch,
    conditional_variance,
    cross_moment_matrix,
    first_moment_matrix,
    k_from_level,
    moment_report,
    second_moment_matrix,
)
from .training import (
    MaxEntModel,
    ModelGradient,
    TrainConfig,
    TrainReport,
    grad_nll,
    gradient_check,
    init_model,
    load_model,
    maxent_kl_loss,
    nll,
    save_model,
    train,
    train_maxent_baseline,
)
from .uncertainty import (
    ConformalCalibrator,
    DirichletBaseline,
    calibrated_interval,
    calibrated_intervals,
    calibration_scores,
    conformal_quantile,
    dirichlet_baseline_calibrate,
    dirichlet_entropy,
    entropy_estimate,
    fit_conformal,
    fit_dirichlet_concentration,
    fsc,
    fsc_table,
    score_matrix,
)

"""K-class and PULSE instrumental-variable estimators with a linear-SEM lab."""

__version__ = "0.1.0"

from .data import (
    CsvSchema,
    Dataset,
    DesignView,
    IdentificationClass,
    ModelPartition,
    center,
    iv_loss,
    load_csv,
    ols_loss,
    projection_apply,
)
from .estimators import (
    EstimateResult,
    EstimatorSpec,
    anchor_estimate,
    estimate,
    fuller_estimate,
    fuller_kappa,
    kclass_estimate,
    liml_estimate,
    liml_kappa,
    modified_tsls,
    ols_estimate,
    tsls_estimate,
)
from .inference import (
    TestConfig,
    TestResult,
    WeakInstrumentReport,
    ar_statistic,
    chi2_quantile,
    test_statistic,
    weak_instrument_stat,
)
from .pulse import (
    PulseConfig,
    PulseMessage,
    PulseResult,
    lambda_star_search,
    primal_solve,
    pulse_estimate,
    t_star,
)
from .sem import (
    InterventionSpec,
    PopulationMoments,
    SemModel,
    e1_model,
    e1_superiority_interval,
    e3_model,
    population_kclass,
    population_moments,
    population_pulse_underid,
    sem_sample,
    univariate_model,
    wcmspe_curve_e1,
    worst_case_mspe,
)
from .experiments import (
    ExperimentConfig,
    ExperimentResult,
    MseOrder,
    mse_partial_order,
    relative_change,
    rho_norm_multivariate,
    run_experiment,
    xi_from_r2,
)

__all__ = [
    "CsvSchema",
    "Dataset",
    "DesignView",
    "EstimateResult",
    "EstimatorSpec",
    "ExperimentConfig",
    "ExperimentResult",
    "IdentificationClass",
    "InterventionSpec",
    "ModelPartition",
    "MseOrder",
    "PopulationMoments",
    "PulseConfig",
    "PulseMessage",
    "PulseResult",
    "SemModel",
    "TestConfig",
    "TestResult",
    "WeakInstrumentReport",
    "anchor_estimate",
    "ar_statistic",
    "center",
    "chi2_quantile",
    "e1_model",
    "e1_superiority_interval",
    "e3_model",
    "estimate",
    "fuller_estimate",
    "fuller_kappa",
    "iv_loss",
    "kclass_estimate",
    "lambda_star_search",
    "liml_estimate",
    "liml_kappa",
    "load_csv",
    "modified_tsls",
    "mse_partial_order",
    "ols_estimate",
    "ols_loss",
    "population_kclass",
    "population_moments",
    "population_pulse_underid",
    "primal_solve",
    "projection_apply",
    "pulse_estimate",
    "relative_change",
    "rho_norm_multivariate",
    "run_experiment",
    "sem_sample",
    "t_star",
    "test_statistic",
    "tsls_estimate",
    "univariate_model",
    "wcmspe_curve_e1",
    "weak_instrument_stat",
    "worst_case_mspe",
    "xi_from_r2",
]

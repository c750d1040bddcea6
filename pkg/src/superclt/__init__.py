"""Finite-type supercritical superprocesses: spectral limit covariances in
closed form, exact-transition simulation, and Monte Carlo verification of
the mixed-Gaussian fluctuation limits."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DomainError,
    ManifestMismatch,
    NoConvergence,
    NotSupercritical,
    NumericalError,
    ParseError,
    SimulationDiverged,
    SupercltError,
    ValidationError,
)
from .limits import (
    LimitCovariance,
    beta_cov,
    eta_cov,
    limit_covariance_matrix,
    rho_sq,
    sigma_cov,
    variance_asymptote,
    variance_exact,
)
from .model import (
    DerivedCoefficients,
    FiniteTypeModel,
    JumpAtom,
    ModelConfig,
    check_grey_condition,
    derive_coefficients,
    load_config,
    load_model,
    reference_config_text,
    reference_model,
    serialize,
)
from .simulate import (
    EnsembleResult,
    PathGrid,
    SimConfig,
    extinction_probability,
    laplace_functional,
    log_laplace,
    simulate_ensemble,
    simulate_path,
)
from .spectral import (
    ComponentSplit,
    EigenClassification,
    EigenFunction,
    SpectralDecomposition,
    classify,
    decompose,
    i_operator,
    project_components,
    propagator,
    resolvent_apply,
    semigroup_apply,
    weighted_inner,
)
from .verify import (
    ReplicaStatistics,
    VerificationReport,
    VerificationRow,
    covariance_test,
    cf_mixture_test,
    critical_constancy_test,
    estimate_statistics,
    martingale_test,
    remark_recombination_test,
    run_verification,
)

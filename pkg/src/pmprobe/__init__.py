"""Simultaneous estimation of position-momentum correlation and scattering
decoherence strength with a single-mode Gaussian probe."""

__version__ = "0.1.0"

from .constants import HBAR, K_B
from .errors import (
    PmProbeError,
    PurityFallbackWarning,
    QuadratureError,
    SingularMatrixError,
    UnphysicalStateError,
    ValidationError,
)
from .phase_space import (
    OMEGA,
    CovarianceMatrix,
    EnvParams,
    ProbeParams,
    covariance,
    d_covariance,
    finite_diff_covariance,
    purity,
    tau0,
)
from .qfim import (
    CompatibilityResult,
    PrecisionReport,
    QfimMatrix,
    closed_form_report,
    compatibility_trace,
    kron2,
    m_matrix,
    performance_ratio,
    qfim_closed_form,
    qfim_determinant,
    qfim_element_general,
    qfim_general,
    qfim_inverse,
    tilde_bounds,
    vec2,
)
from .decoherence import (
    RhoParameters,
    ThermometryConstants,
    decoherence_timescale,
    lambda_of_temperature,
    propagate_numeric,
    quadrature_moments,
    rho_parameters,
    temperature_of_lambda,
)
from .wigner import (
    PhaseSpaceGrid,
    ellipse_angle,
    scaled_rho_sampler,
    wigner_from_rho,
    wigner_gaussian,
    wigner_grid,
)

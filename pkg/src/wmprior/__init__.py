"""Whittle-Matern Gaussian priors with real exponents alpha > 1 on 2-D grids.

Fast application of fractional covariance operators through sinc quadrature
and a multipreconditioned shifted-system Krylov solver, random-field
sampling (SPDE and truncated KL), and linear Bayesian inversion with hybrid
generalized Golub-Kahan regularization and low-rank posterior variance.
"""

from .covariance import (
    CovarianceApplicator,
    DenseCovariance,
    PriorConfig,
    dense_cov,
    estimate_diag,
    estimate_diag_q,
)
from .errors import (
    BreakdownError,
    ConfigError,
    FileFormatError,
    InvalidCoefficientError,
    InvalidGridError,
    NotSPDError,
    PartialConvergenceError,
    SolverError,
    ValidationError,
    WmpriorError,
)
from .fileio import load_data_csv, load_field, render_pgm, save_data_csv, save_field
from .forward import LinearForward, NoiseModel, heat_operator, make_data, ray_matrix, tomo_operator
from .grid import (
    Coefficients,
    Field,
    Grid,
    anisotropy_tensor,
    assemble_mass,
    assemble_stiffness,
    cholesky_mass,
    factorize,
    load_matrix,
    save_matrix,
)
from .inversion import (
    GenGKState,
    MapResult,
    gengk_expand,
    gengk_state,
    map_estimate,
    posterior_variance,
    select_lambda_gcv,
    solve_projected,
)
from .randomness import RandomStream
from .sampling import KLBasis, SpdeSampler, kl_eigs, sample_kl, sample_spde
from .shifted import (
    DEFAULT_TAUS,
    MPArnoldiState,
    PreconditionerSet,
    ShiftedFamily,
    ShiftedReport,
    direct_shifted,
    residual_history,
    solve_shifted,
)
from .sincquad import SincRule, inverse_rule, rescaled_weights, spde_rule

__version__ = "0.1.0"

__all__ = [
    "BreakdownError",
    "Coefficients",
    "ConfigError",
    "CovarianceApplicator",
    "DEFAULT_TAUS",
    "DenseCovariance",
    "Field",
    "FileFormatError",
    "GenGKState",
    "Grid",
    "InvalidCoefficientError",
    "InvalidGridError",
    "KLBasis",
    "LinearForward",
    "MPArnoldiState",
    "MapResult",
    "NoiseModel",
    "NotSPDError",
    "PartialConvergenceError",
    "PreconditionerSet",
    "PriorConfig",
    "RandomStream",
    "ShiftedFamily",
    "ShiftedReport",
    "SincRule",
    "SolverError",
    "SpdeSampler",
    "ValidationError",
    "WmpriorError",
    "anisotropy_tensor",
    "assemble_mass",
    "assemble_stiffness",
    "cholesky_mass",
    "dense_cov",
    "direct_shifted",
    "estimate_diag",
    "estimate_diag_q",
    "factorize",
    "gengk_expand",
    "gengk_state",
    "heat_operator",
    "inverse_rule",
    "kl_eigs",
    "load_data_csv",
    "load_field",
    "load_matrix",
    "make_data",
    "map_estimate",
    "posterior_variance",
    "ray_matrix",
    "render_pgm",
    "rescaled_weights",
    "residual_history",
    "sample_kl",
    "sample_spde",
    "save_data_csv",
    "save_field",
    "save_matrix",
    "select_lambda_gcv",
    "solve_projected",
    "solve_shifted",
    "spde_rule",
    "tomo_operator",
]

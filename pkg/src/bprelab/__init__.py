"""Branching processes in varying and random environments: exact moment
tables, critical-rate calculators, and Monte Carlo convergence-rate checks."""

from ._version import __version__
from .environment import EnvPath, Environment, FixedPath, IIDMixture, single_state
from .errors import (
    BpreLabError,
    ConfigError,
    EstimateUnavailableError,
    FitUnavailableError,
    ParameterError,
    TableOverflowError,
    UnsupportedOperationError,
)
from .estimators import (
    DecayFit,
    LpEstimate,
    as_rate_diagnostic,
    burkholder_constants,
    burkholder_sandwich,
    fit_decay,
    lp_norm,
    w_moment,
)
from .exact_moments import (
    GrowthEnvelope,
    MomentTable,
    P2ClosedForms,
    annealed_moment_table,
    annealed_u,
    conditional_moment_coeffs,
    growth_envelope,
    growth_envelope_check,
    p2_closed_forms,
    quenched_increment_second_moments,
    quenched_moments,
    quenched_p2_tail,
    recursion_inequality_slacks,
)
from .offspring import OffspringLaw
from .rates import (
    RateReport,
    annealed_critical_conditions,
    annealed_lp_criterion,
    annealed_rates,
    default_rho_grid,
    quenched_bounds,
    rate_report,
    series_diagnostic,
)
from .simulate import SimConfig, TrajectoryBatch, increment_identity_check, run

__all__ = [
    "__version__",
    "BpreLabError",
    "ConfigError",
    "ParameterError",
    "UnsupportedOperationError",
    "TableOverflowError",
    "EstimateUnavailableError",
    "FitUnavailableError",
    "OffspringLaw",
    "EnvPath",
    "Environment",
    "FixedPath",
    "IIDMixture",
    "single_state",
    "RateReport",
    "quenched_bounds",
    "annealed_rates",
    "annealed_lp_criterion",
    "annealed_critical_conditions",
    "rate_report",
    "default_rho_grid",
    "series_diagnostic",
    "MomentTable",
    "P2ClosedForms",
    "GrowthEnvelope",
    "conditional_moment_coeffs",
    "quenched_moments",
    "annealed_moment_table",
    "annealed_u",
    "p2_closed_forms",
    "quenched_p2_tail",
    "quenched_increment_second_moments",
    "growth_envelope",
    "growth_envelope_check",
    "recursion_inequality_slacks",
    "SimConfig",
    "TrajectoryBatch",
    "run",
    "increment_identity_check",
    "LpEstimate",
    "DecayFit",
    "lp_norm",
    "w_moment",
    "fit_decay",
    "burkholder_constants",
    "burkholder_sandwich",
    "as_rate_diagnostic",
]

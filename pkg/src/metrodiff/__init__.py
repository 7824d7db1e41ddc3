"""Metropolis-adjusted staged integrators for overdamped diffusions.

The package simulates dY = -M(Y) DU(Y) dt + divergence correction +
sqrt(2/beta) B(Y) dW with an accept-reject step that keeps e^{-beta U}
exactly invariant, alongside a predictor-corrector baseline, a catalog of
benchmark models, and batch drivers for reproducible ensembles.
"""

from .errors import (
    BudgetExceededError,
    ConfigError,
    NotSpdError,
    OutOfDomainError,
    ZeroSeparationError,
)
from .ensemble import (
    EnsembleTask,
    run_endpoints,
    run_first_passage,
    run_positions,
    run_series,
)
from .fixman import FixmanConfig, fixman_step, run_with_rejection
from .metropolis import IntegratorConfig, propose, acceptance, step, run_trajectory
from .models import MODEL_NAMES, make_model
from .observables import (
    ConvergenceStudy,
    EnsembleEstimate,
    mfpt_oracle,
    weak_error_study,
)
from .stages import (
    make_drift_scheme,
    make_noise_scheme,
    make_stage_fraction_policy,
    small_noise_exponent,
    scan_energy_grid,
)

__version__ = "0.1.0"

__all__ = [
    "BudgetExceededError",
    "ConfigError",
    "NotSpdError",
    "OutOfDomainError",
    "ZeroSeparationError",
    "EnsembleTask",
    "run_endpoints",
    "run_first_passage",
    "run_positions",
    "run_series",
    "FixmanConfig",
    "fixman_step",
    "run_with_rejection",
    "IntegratorConfig",
    "propose",
    "acceptance",
    "step",
    "run_trajectory",
    "MODEL_NAMES",
    "make_model",
    "ConvergenceStudy",
    "EnsembleEstimate",
    "mfpt_oracle",
    "weak_error_study",
    "make_drift_scheme",
    "make_noise_scheme",
    "make_stage_fraction_policy",
    "small_noise_exponent",
    "scan_energy_grid",
    "__version__",
]

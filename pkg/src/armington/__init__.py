"""Trade elasticity estimation from import value shares and exchange rates."""

from . import diagnostics, estimators, pipelines, simulator
from .errors import (
    ArmingtonError,
    ComplexRootsError,
    ConflictError,
    ConvergenceError,
    DegenerateError,
    DimensionError,
    EstimationError,
    IdentificationError,
    NotApplicableError,
    NumericalError,
    ParseError,
    SingularDesignError,
    SingularRecoveryError,
)
from .panel import Panel, PanelObservation, compute_value_shares, double_demean, filter_coverage, load_panel
from .pipelines import MethodReport, estimate
from .simulator import DgpConfig, generate_panel, run_monte_carlo

__version__ = "0.1.0"

"""Finite-difference experiments on convective blow-up suppression.

Four one-dimensional models on (-1, 1) -- convective Burgers,
Kuramoto-Sivashinsky, Cahn-Hilliard and KdV -- are integrated with an
adaptive IMEX scheme and classified as dissipative or blowing up.
"""

from .diagnostics import DiagnosticsConfig, NormSeries, PowerWeight, ChWeight
from .experiments import Regime, absorbing_set_check, classify_run, convergence_study, sweep
from .grid_ops import BcScheme, Grid, diff_operator, make_grid, quad_trapz
from .models import EquationSpec, FluxForm, FSpec, GSpec, Model
from .stepper import OutcomeKind, RunOutcome, Scheme, StepControls, integrate

__version__ = "0.1.0"

__all__ = [
    "BcScheme", "ChWeight", "DiagnosticsConfig", "EquationSpec", "FSpec", "FluxForm", "GSpec",
    "Grid", "Model", "NormSeries", "OutcomeKind", "PowerWeight", "Regime", "RunOutcome",
    "Scheme", "StepControls", "absorbing_set_check", "classify_run", "convergence_study",
    "diff_operator", "integrate", "make_grid", "quad_trapz", "sweep",
]

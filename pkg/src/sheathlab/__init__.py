"""Stationary plasma sheaths and the time evolution of their perturbations."""

from .errors import (CharacteristicViolation, NoConvergence, NumericalError, PreconditionError,
                     RefusedNoSheath, SheathError)
from .model import PlasmaParams, Regime, char_speeds, classify_regime, degenerate_constants, solve_lambda0
from .sagdeev import SagdeevContext, existence_check
from .stationary import StationaryProfile, build_profile, default_grid
from .grid import HalfLineGrid, PeriodicStrip
from .poisson import PoissonProblem, poisson_solve
from .diagnostics import WeightSpec, energy_E0, fit_decay, qform_check, weighted_norm
from .dynamics import PerturbationState, SchemeConfig, evolve, make_initial, step
from .harness import RunConfig

__version__ = "0.1.0"

"""SIRS dynamics with waning and boosting of immunity: a delay differential model.

Submodules: ``model`` (parameters, right-hand side, invariant-set
functional), ``equilibria``, ``spectrum`` (characteristic roots and
stability), ``simulator``, ``chartscan`` (two-parameter stability charts)
and ``cli``.
"""

from .equilibria import Equilibrium, EquilibriumError, dfe, endemic_equilibrium, find_equilibrium
from .model import HistoryFunction, ModelParams, ParameterError, StatePoint, r0
from .simulator import SimulationConfig, Trajectory, liminf_estimate, monitor_invariants, simulate, simulate_tau0
from .spectrum import StabilityClass, classify_stability, rightmost_roots

__version__ = "0.1.0"

__all__ = [
    "Equilibrium", "EquilibriumError", "dfe", "endemic_equilibrium", "find_equilibrium",
    "HistoryFunction", "ModelParams", "ParameterError", "StatePoint", "r0",
    "SimulationConfig", "Trajectory", "liminf_estimate", "monitor_invariants", "simulate", "simulate_tau0",
    "StabilityClass", "classify_stability", "rightmost_roots",
]

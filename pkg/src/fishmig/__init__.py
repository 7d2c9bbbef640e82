"""Stochastic control toolkit for migrating fish schools: coupled
position/velocity dynamics, a log-correlated surface-roughness weight,
desirability solvers on grids and by Monte Carlo, kernel path integrals and
the closed-form single-fish strategy."""

from importlib import metadata

try:
    __version__ = metadata.version("fishmig")
except metadata.PackageNotFoundError:
    __version__ = "0.1.0"

from .errors import NumericalError, ValidationError
from .model import ModelParams, RewardSpec, SchoolState, compare_policies, estimate_objective
from .sde import DynamicsSpec, PathEnsemble, simulate

__all__ = [
    "__version__",
    "NumericalError",
    "ValidationError",
    "ModelParams",
    "RewardSpec",
    "SchoolState",
    "compare_policies",
    "estimate_objective",
    "DynamicsSpec",
    "PathEnsemble",
    "simulate",
]

"""Finite element schemes for the 2D stochastic Stokes equations.

The package implements implicit-Euler time stepping for the incompressible
Stokes system driven by multiplicative Wiener noise, in two flavors per
element pair: a standard scheme and one that removes the gradient part of
the noise through a discrete Helmholtz split before it enters the momentum
equation.  Element pairs: Taylor-Hood (P2/P1) and pressure-stabilized equal
order (P1/P1).  A Monte Carlo layer reproduces the convergence studies with
common random paths, and a small CLI packages the standard experiments.
"""

from .mc import ErrorReport, StudySpec, compare_stabilization, fit_orders, run_study
from .noise import WienerPath, coarsen, sample_path
from .schemes import NumericalError, SchemeConfig, SchemeState, Stepper, Trajectory

__version__ = "0.1.0"

__all__ = [
    "ErrorReport",
    "NumericalError",
    "SchemeConfig",
    "SchemeState",
    "Stepper",
    "StudySpec",
    "Trajectory",
    "WienerPath",
    "__version__",
    "coarsen",
    "compare_stabilization",
    "fit_orders",
    "run_study",
    "sample_path",
]

"""Optimal consumption and investment with a running-maximum reference level.

Closed-form dual and primal solutions for exponential utility of
consumption measured against a fraction of its own historical peak, with
Monte Carlo, finite-difference and residual checks.

Typical use::

    from spendmax import solve
    model = solve({"r": 0.05, "mu": 0.1, "sigma": 0.25, "beta": 1, "lambda": 0.5})
    model.boundaries(1.0)
    model.policy(10.0, 1.0)
"""

from .dual import DualCoefficients, DualSolution, Regime
from .errors import (BracketError, ConfigError, DomainError, GridError,
                     SpendmaxError, StencilError)
from .model import (DerivedConstants, LambdaCase, ModelParams, RhoCase,
                    derive_constants, utility, validate_params)
from .primal import Boundaries, PolicyPoint, PrimalSolution, solve
from .simulate import MCEstimate, PathConfig, Simulator, SimPath

__all__ = [
    "BracketError", "Boundaries", "ConfigError", "DerivedConstants", "DomainError",
    "DualCoefficients", "DualSolution", "GridError", "LambdaCase", "MCEstimate",
    "ModelParams", "PathConfig", "PolicyPoint", "PrimalSolution", "Regime",
    "RhoCase", "SimPath", "Simulator", "SpendmaxError", "StencilError",
    "derive_constants", "solve", "utility", "validate_params",
]
__version__ = "0.1.0"

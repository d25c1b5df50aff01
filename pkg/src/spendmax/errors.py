"""Exception types raised across the package."""


class SpendmaxError(Exception):
    """Base class for all package errors."""


class DomainError(SpendmaxError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(SpendmaxError, ValueError):
    """A simulation or CLI configuration is invalid."""


class BracketError(SpendmaxError, RuntimeError):
    """A root bracket could not be established."""


class GridError(SpendmaxError, ValueError):
    """A discretisation grid is unusable (too coarse, wrong span)."""


class StencilError(SpendmaxError, RuntimeError):
    """A finite-difference stencil straddles a regime boundary."""

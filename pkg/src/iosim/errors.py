"""Exception types shared across the package.

The CLI maps these onto exit codes, so keep the hierarchy flat.
"""


class IosimError(Exception):
    """Base class for all package errors."""


class ConfigError(IosimError, ValueError):
    """Invalid configuration, parameter set or input file."""

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class DomainError(IosimError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class DegenerateCircuitError(DomainError):
    """An admittance or impedance collapsed to a short or an open."""


class ExtrapolationError(IosimError, ValueError):
    """Query outside the sampled region of a table."""


class GeometryError(IosimError, ValueError):
    """Degenerate scene geometry (zero-length vectors, points on the surface plane)."""


class ShapeError(IosimError, ValueError):
    """Array dimensions do not agree."""


class CapabilityError(IosimError):
    """Request exceeds what a solver can do (e.g. enumeration too large)."""


class PatternError(IosimError, ValueError):
    """A beam-pattern metric is undefined for the given pattern."""

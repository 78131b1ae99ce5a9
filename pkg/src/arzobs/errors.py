"""Exception hierarchy shared by all modules."""


class ArzError(Exception):
    """Base class for all package errors."""


class DomainError(ArzError, ValueError):
    """A density (or other argument) lies outside the admissible range."""


class ParameterError(ArzError, ValueError):
    """A parameter record violates its invariants."""


class CalibrationError(ArzError):
    """Fitting failed or produced a diagram that violates hyperbolicity.

    ``best`` and ``residual`` carry the best-so-far result when available.
    """

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class RegimeError(ArzError):
    """The reference state is not in the regime an operation supports."""


class NumericalError(ArzError):
    """Base for failures of the time-stepping engine."""


class DegenerateStateError(NumericalError):
    """Zero or negative density where a positive one is required."""


class BlowUpError(NumericalError):
    """The scheme produced NaN or non-positive density."""

    def __init__(self, message, step=None, time=None):
        super().__init__(message)
        self.step = step
        self.time = time


class ObserverDivergenceError(BlowUpError):
    """The observer estimate left the admissible set."""


class CFLError(NumericalError):
    """The requested time step exceeds the CFL bound."""


class DataError(ArzError):
    """Input data is missing, malformed or has gaps beyond tolerance."""


class ConfigError(ArzError):
    """Run configuration failed validation; message names the field path."""

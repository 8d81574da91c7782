"""Exception types raised across the package."""


class DDSimError(Exception):
    """Base class for all simulator errors."""


class InsufficientSites(DDSimError):
    pass


class ZeroSeparation(DDSimError):
    pass


class CapacityExceeded(DDSimError):
    pass


class DimensionMismatch(DDSimError):
    pass


class ZeroDephasingNorm(DDSimError):
    pass


class InvalidTiming(DDSimError):
    pass


class UnknownCase(DDSimError):
    pass


class Recoupled(DDSimError):
    """Raised when a toggling phase step wraps to zero, so no filtering occurs."""


class EigenFailure(DDSimError):
    pass


class ZeroInitialState(DDSimError):
    pass


class NonPositiveSurvival(DDSimError):
    """Survival probability fell below the floor where a log readout is meaningful."""


class EmptyWindow(DDSimError):
    pass


class NoConvergence(DDSimError):
    pass


class DegenerateData(DDSimError):
    pass


class TooFewExtrema(DDSimError):
    pass


class NoDipDetected(DDSimError):
    pass


class InvalidInputs(DDSimError):
    pass


class ConfigError(DDSimError):
    """Malformed or inconsistent run configuration."""


class MagnusDivergenceWarning(UserWarning):
    """tau * ||H|| is not small; the Magnus series may not converge."""

"""Exception hierarchy for the package."""


class WmlmcError(Exception):
    """Base class for all errors raised by wmlmc."""


class NonFiniteSampleError(WmlmcError):
    """A simulated path overflowed or produced NaN."""


class InsufficientDataError(WmlmcError):
    """Too few samples to form variance estimates."""


class PlanningError(WmlmcError, ValueError):
    """Moments handed to a planner are unusable (non-finite, |rho| > 1, ...)."""


class OptimizerError(WmlmcError):
    """Derivative-free node optimisation failed to settle.

    ``best_x`` and ``best_f`` carry the best point seen before giving up.
    """

    def __init__(self, message, best_x=None, best_f=None):
        super().__init__(message)
        self.best_x = best_x
        self.best_f = best_f


class ConfigError(WmlmcError, ValueError):
    """An experiment configuration failed validation."""

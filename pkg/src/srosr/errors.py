"""Exception types shared across the package."""


class SrosrError(Exception):
    """Base class for errors raised by this package."""


class DataFormatError(SrosrError):
    """A data file is malformed or a dataset violates a structural requirement."""


class SolverError(SrosrError):
    """The l1 solver failed to converge.

    Carries the last duality gap and residual so callers can report how far
    the solve got.
    """

    def __init__(self, message: str, gap: float = float("nan"),
                 residual: float = float("nan")):
        super().__init__(message)
        self.gap = gap
        self.residual = residual


class TailFitError(SrosrError):
    """A generalized Pareto tail could not be fitted."""


class ConfigError(SrosrError):
    """A CLI or sweep configuration is invalid."""

"""Exception hierarchy shared across the package."""


class GammaZeroError(Exception):
    """Base class for every error raised by gammazero."""


class InvalidActionError(GammaZeroError, ValueError):
    pass


class InvalidObservationError(GammaZeroError, ValueError):
    """An observation whose kind does not match the action that produced it."""


class InvalidArgumentError(GammaZeroError, ValueError):
    pass


class BeliefDepletionError(GammaZeroError):
    """All particle weights collapsed to zero and the fallback did not recover.

    ``counts`` carries diagnostics (particle count, retries, action, observation).
    """

    def __init__(self, message: str, counts: dict | None = None):
        super().__init__(message)
        self.counts = dict(counts or {})


class ZeroPosteriorError(GammaZeroError):
    pass


class UnsupportedDomainError(GammaZeroError):
    pass


class ShapeError(GammaZeroError, ValueError):
    pass


class NumericError(GammaZeroError, FloatingPointError):
    pass


class ParamFileError(GammaZeroError):
    pass


class DataError(GammaZeroError, ValueError):
    pass


class ExpertBudgetError(GammaZeroError):
    pass


class NoActionError(GammaZeroError):
    pass


class ConfigError(GammaZeroError, ValueError):
    pass

"""Exception hierarchy shared by all tbnrf modules."""


class TbnrfError(Exception):
    """Base class for every error raised by the package."""


class DomainError(TbnrfError, ValueError):
    """A parameter lies outside its physical domain."""


class DegenerateInputError(TbnrfError, ValueError):
    """The shot-noise level (sum of mean counts) is zero, so R is undefined."""


class RejectionTimeoutError(TbnrfError, RuntimeError):
    """Heralded rejection sampling cannot reach the requested sample count."""

    def __init__(self, message, acceptance_rate):
        super().__init__(message)
        self.acceptance_rate = acceptance_rate


class FitConvergenceError(TbnrfError, RuntimeError):
    """Multi-start fit did not converge; ``result`` still holds the best point."""

    def __init__(self, message, result):
        super().__init__(message)
        self.result = result

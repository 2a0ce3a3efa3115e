"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition or invariant."""


class NumericalError(RuntimeError):
    """Raised when a numerical routine fails (factorization, divergence, ...)."""


class FitError(NumericalError):
    """Raised when a model fit does not converge.

    Carries the best parameters found so far in ``best_params`` so callers
    can inspect or reuse them.
    """

    def __init__(self, message, best_params=None):
        super().__init__(message)
        self.best_params = best_params

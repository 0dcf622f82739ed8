"""Exception hierarchy shared by all modules."""


class FbmromError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(FbmromError, ValueError):
    """Inputs violate a documented precondition (shapes, ranges, flags)."""


class InterpretationError(ValidationError):
    """Operation not defined for the system's integral interpretation / Hurst index."""


class NumericalError(FbmromError, ArithmeticError):
    """A numerical procedure failed (singular solve, lost definiteness, ...)."""


class FactorizationError(NumericalError):
    """Covariance matrix is numerically not positive definite."""


class SingularStepError(NumericalError):
    """Implicit step matrix is numerically singular.

    Attributes
    ----------
    step : int
        Index ``k`` of the failing step ``t_k -> t_{k+1}``.
    sample : int or None
        Monte-Carlo sample index, when known.
    """

    def __init__(self, message, step, sample=None):
        super().__init__(message)
        self.step = step
        self.sample = sample


class SingularGeneratorError(NumericalError):
    """Generalized Lyapunov operator is singular (boundary of stability)."""


class InstabilityError(NumericalError):
    """A mean-square stability precondition does not hold."""


class DefinitenessError(NumericalError):
    """A Gramian required to be positive definite is not."""


class RankError(ValidationError):
    """Requested reduced order exceeds the available numerical rank."""

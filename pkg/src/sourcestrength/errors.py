"""Exception hierarchy shared by every module of the package."""


class SourceStrengthError(Exception):
    """Base class for all package errors."""


class ParameterError(SourceStrengthError, ValueError):
    """A physical parameter or function argument is outside its valid domain."""


class InvalidQuantityError(ParameterError):
    """A unit conversion received a non-positive or non-finite value."""


class EstimationError(SourceStrengthError):
    """An estimator could not produce an estimate from the given data."""


class SingularFitError(EstimationError):
    """The normal equations (or Jacobian) of a fit are rank deficient."""


class DegenerateDataError(EstimationError):
    """The data carry no usable signal, e.g. a non-positive first moment."""


class UnderdeterminedError(EstimationError):
    """Too few samples have been absorbed to identify both parameters."""


class OutOfRangeError(EstimationError, ValueError):
    """A moment ratio lies outside the open range of ``G_m``.

    Attributes
    ----------
    bound : str
        ``"lower"`` when the ratio is at or below 1, ``"upper"`` when it is at
        or above the ``r -> 0`` limit ``2**m / (m + 1)``.
    """

    def __init__(self, message, bound):
        super().__init__(message)
        self.bound = bound


class DegenerateConfigurationError(SourceStrengthError, ValueError):
    """A theoretical variance is undefined for the requested configuration."""

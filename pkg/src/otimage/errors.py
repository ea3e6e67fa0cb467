"""Exception types shared across the package."""


class OTImageError(Exception):
    """Base class for all otimage errors."""


class InvalidArgumentError(OTImageError, ValueError):
    """A caller-supplied argument violates a documented precondition."""


class NumericFailureError(OTImageError, ArithmeticError):
    """A numerical routine failed (singular system, non-finite values,
    stagnation).  Carries whatever context the failing routine attached."""

    def __init__(self, message, *, iteration=None, residual=None):
        super().__init__(message)
        self.iteration = iteration
        self.residual = residual


class UndefinedCorrelationError(OTImageError, ValueError):
    """Pearson correlation requested for a zero-variance image."""


class IdxFormatError(OTImageError, ValueError):
    """Base class for IDX container parse failures."""


class IdxBadMagicError(IdxFormatError):
    """IDX file does not start with the expected magic number."""


class IdxTruncatedError(IdxFormatError):
    """IDX payload is shorter than its header promises."""


class IdxCountMismatchError(IdxFormatError):
    """Image file and label file disagree on the number of items."""

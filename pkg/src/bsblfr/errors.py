"""Exception hierarchy shared by all bsblfr modules."""


class BsblError(Exception):
    """Base class for every error raised by this package."""


class InputValidationError(BsblError, ValueError):
    """Raised when inputs are malformed: wrong shapes, non-finite entries, bad ranges."""


class DimensionError(InputValidationError):
    pass


class NumericError(BsblError, ArithmeticError):
    """A factorization failed (matrix not positive definite within tolerance)."""


class SolverDivergenceError(BsblError, RuntimeError):
    """The BSBL cost increased beyond the allowed slack.

    The full cost trace up to the offending step is kept on ``trace``.
    """

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = list(trace)


class CombinatorialGuardError(BsblError, ValueError):
    """Exhaustive search would enumerate too many candidate supports."""


class FormatError(BsblError, ValueError):
    """An image or config file does not follow the expected format."""


class ClassificationError(BsblError, RuntimeError):
    """A solver failed while coding a test vector; the cause is chained."""


class ConfigError(BsblError, ValueError):
    pass

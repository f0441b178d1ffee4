"""Exception types shared across the package."""


class MdelmError(Exception):
    """Base class for errors raised by mdelm."""


class ValidationError(MdelmError, ValueError):
    """Invalid user input: bad arguments, malformed files, schema mismatch."""


class NearInterpolationError(MdelmError, ArithmeticError):
    """A leverage value is so close to 1 that PRESS residuals blow up."""


class DivergenceError(MdelmError, ArithmeticError):
    """SGD produced non-finite weights."""

    def __init__(self, alpha, message=None):
        self.alpha = alpha
        super().__init__(message or f"SGD diverged for alpha={alpha!r}")

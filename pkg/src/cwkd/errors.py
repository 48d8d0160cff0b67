"""Exception types shared across the package."""


class CwkdError(Exception):
    """Base class for all package errors."""


class ShapeError(CwkdError, ValueError):
    """Tensor shapes are inconsistent with the operation's contract."""


class ParameterError(CwkdError, ValueError):
    """A scalar argument (temperature, exponent, axis, ...) is out of range."""


class NormalizationError(CwkdError, ArithmeticError):
    """A quantity that must be normalized has zero norm (e.g. an all-zero
    attention map)."""


class OracleError(CwkdError, ArithmeticError):
    """The finite-difference oracle hit a non-finite function evaluation."""


class TrainingDiverged(CwkdError, RuntimeError):
    """Training produced a non-finite loss.

    Carries the step index and the offending loss components so callers can
    dump state before aborting.
    """

    def __init__(self, step, components):
        self.step = step
        self.components = dict(components)
        super().__init__(f"non-finite loss at step {step}: {self.components}")

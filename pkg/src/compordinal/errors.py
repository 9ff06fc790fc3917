"""Exception hierarchy shared by every stage of the pipeline."""


class CompOrdinalError(Exception):
    """Base class for all package errors."""


class InvalidInputError(CompOrdinalError, ValueError):
    """Non-finite, mis-shaped or out-of-range input."""


class InvalidConfigError(CompOrdinalError, ValueError):
    """A run or model configuration that cannot be honoured."""


class InvalidDesignError(CompOrdinalError, ValueError):
    """Data that cannot support the requested design (e.g. a single arm)."""


class InfeasibleDesignError(InvalidDesignError):
    """Subclassification cannot meet the per-arm minimum in any subclass."""


class SingularCurvatureError(CompOrdinalError, ArithmeticError):
    """The log-posterior has no finite mode or a singular curvature matrix."""


class NumericalError(CompOrdinalError, ArithmeticError):
    """A numerical contract (e.g. positive semi-definiteness) was violated."""


class SchemaError(CompOrdinalError, ValueError):
    """Input file does not follow the documented column schema."""


class NotSupportedError(CompOrdinalError, NotImplementedError):
    """Requested estimand has no valid implementation for this method."""


class StageError(CompOrdinalError, RuntimeError):
    """Wraps a failure with the name of the pipeline stage that raised it."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")

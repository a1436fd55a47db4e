"""Exception types raised by the estimators and the CLI."""


class AdroError(Exception):
    pass


class InvalidInputError(AdroError, ValueError):
    """Labels, shapes or parameters that violate a model's domain."""


class ConfigurationError(AdroError, ValueError):
    pass


class DegenerateParameterError(AdroError, ValueError):
    """Raised when a routine needs beta != 0 (direction beta/||beta||)."""


class UnboundedInnerProblemError(AdroError, ValueError):
    """The transport multiplier is too small for the inner sup to be finite/concave."""


class SolverDivergedError(AdroError, RuntimeError):
    pass


class IllConditionedCurvatureError(AdroError, ArithmeticError):
    pass


class NewtonFailedError(AdroError, RuntimeError):
    def __init__(self, message, last_iterate=None, residual_norm=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual_norm = residual_norm


class BracketFailureError(AdroError, ValueError):
    pass


class InsufficientDataError(AdroError, ValueError):
    pass


class EvaluationError(AdroError, ArithmeticError):
    pass

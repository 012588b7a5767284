"""Exception types raised across the package."""


class Exp3CILError(Exception):
    """Base class for all package errors."""


class InvalidActionSpaceError(Exp3CILError, ValueError):
    pass


class InvalidParameterError(Exp3CILError, ValueError):
    pass


class RewardRangeError(Exp3CILError, ValueError):
    pass


class ImportanceWeightError(Exp3CILError, ArithmeticError):
    pass


class InvalidGridError(Exp3CILError, ValueError):
    pass


class ActionNotFoundError(Exp3CILError, KeyError):
    pass


class ShapeError(Exp3CILError, ValueError):
    pass


class DegenerateCosineError(Exp3CILError, ArithmeticError):
    pass


class DomainError(Exp3CILError, ValueError):
    pass


class LabelError(Exp3CILError, ValueError):
    pass


class NumericError(Exp3CILError, ArithmeticError):
    pass


class InsufficientDataError(Exp3CILError, ValueError):
    pass


class EmptyEvaluationError(Exp3CILError, ValueError):
    pass


class BudgetError(Exp3CILError, ValueError):
    pass


class ScheduleError(Exp3CILError, ValueError):
    pass


class ParseError(Exp3CILError, ValueError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class BalanceError(Exp3CILError, ValueError):
    def __init__(self, message, label=None):
        super().__init__(message)
        self.label = label


class EmptyRolloutError(Exp3CILError, ValueError):
    pass


class ConfigError(Exp3CILError, ValueError):
    pass


class ComparisonError(Exp3CILError, ValueError):
    pass


class ProtocolError(Exp3CILError, RuntimeError):
    """Raised when the held-out test set is read outside final evaluation."""

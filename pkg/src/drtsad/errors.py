"""Exception types shared across the package."""

from __future__ import annotations


class DrtsadError(Exception):
    """Base class for all errors raised by drtsad."""


class PreconditionError(DrtsadError, ValueError):
    """An argument violates a documented precondition."""


class InsufficientSamples(PreconditionError):
    pass


class ZeroVariance(DrtsadError, ValueError):
    pass


class InfiniteDivergence(DrtsadError, ArithmeticError):
    pass


class NotSymmetric(PreconditionError):
    pass


class EvaluationFailed(DrtsadError, ArithmeticError):
    pass


class DimensionMismatch(PreconditionError):
    pass


class ManifestMismatch(DrtsadError):
    def __init__(self, field: str, expected, found, where: str = "") -> None:
        self.field = field
        self.expected = expected
        self.found = found
        loc = f" in {where}" if where else ""
        super().__init__(f"manifest mismatch on {field}{loc}: expected {expected}, found {found}")


class ParseError(DrtsadError, ValueError):
    def __init__(self, path, row: int, col: int, cell: str) -> None:
        self.path = path
        self.row = row
        self.col = col
        super().__init__(f"{path}: cannot parse {cell!r} at row {row}, column {col}")


class SeriesTooShort(PreconditionError):
    pass


class TooLargeForExact(PreconditionError):
    pass


class ConstraintViolation(PreconditionError):
    """A model/reducer cannot run at the requested dimensionality.

    The grid runner turns these into ``skipped`` records instead of failures.
    """


class DimensionTooLow(ConstraintViolation):
    pass


class TargetDimTooHigh(ConstraintViolation):
    pass


class TrainingDiverged(DrtsadError, ArithmeticError):
    pass


class EmptyInput(PreconditionError):
    pass

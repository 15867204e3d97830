"""Exception hierarchy.

Validation problems derive from :class:`ValidationError` (also a
``ValueError``); file-format and I/O problems derive from
:class:`StorageError`. The CLI maps the two families to exit codes 1 and 2.
"""


class VattnError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(VattnError, ValueError):
    pass


class ShapeMismatch(ValidationError):
    pass


class NonFiniteEntry(ValidationError):
    def __init__(self, row, col, where="matrix"):
        self.row = row
        self.col = col
        self.where = where
        super().__init__(f"non-finite entry in {where} at ({row}, {col})")


class EmptyCache(ValidationError):
    pass


class EmptySelection(ValidationError):
    pass


class InvalidProbability(ValidationError):
    pass


class CountOutOfRange(ValidationError):
    pass


class IndexOutOfRange(ValidationError):
    pass


class BudgetExceedsResidual(ValidationError):
    pass


class InvalidTolerance(ValidationError):
    pass


class EmptyBaseSample(ValidationError):
    pass


class DegenerateVector(ValidationError):
    pass


class InvalidSpec(ValidationError):
    pass


class InvalidParams(ValidationError):
    pass


class ZeroReference(ValidationError):
    pass


class StorageError(VattnError):
    pass


class BadMagic(StorageError):
    pass


class UnsupportedVersion(StorageError):
    pass


class TruncatedFile(StorageError):
    pass


class IoFailure(StorageError, OSError):
    pass

"""Exception hierarchy shared by every irnet module."""


class IRNetError(Exception):
    """Base class for all irnet errors."""


class DataError(IRNetError, ValueError):
    """Bad input data or arguments (CLI exit code 2)."""


# roadnet
class UnknownRoadInEdge(DataError):
    pass


class SelfLoop(DataError):
    pass


class SentinelIdUsed(DataError):
    pass


class OrderingNotPermutation(DataError):
    pass


class UnknownRoad(DataError):
    pass


# warp
class EmptySequence(DataError):
    pass


class InvalidQ(DataError):
    pass


# reconstruct
class MissingFeature(DataError):
    pass


class LengthMismatch(DataError):
    pass


# datagen
class MalformedRow(DataError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class NonPositiveSpeed(MalformedRow):
    pass


class MissingTimestamp(DataError):
    pass


class WindowOutOfRange(DataError):
    pass


class RangeTooShort(DataError):
    pass


class BadFractions(DataError):
    pass


class DegenerateRange(DataError):
    pass


class BadSpec(DataError):
    pass


# gradcore / layers
class ShapeMismatch(DataError):
    pass


class RowsNotDivisible(ShapeMismatch):
    pass


class NonFiniteResult(IRNetError, ArithmeticError):
    """A tensor op produced NaN or Inf (CLI exit code 3)."""


class NotScalarLoss(IRNetError):
    pass


class NonDeterministicFunction(IRNetError):
    pass


# model / checkpoint
class BadConfig(DataError):
    pass


class VersionMismatch(DataError):
    pass


class CorruptChecksum(DataError):
    pass


# train-eval
class ConfigMismatch(DataError):
    pass


class EmptyFineTuneSet(DataError):
    pass


class EmptyDataset(DataError):
    pass


class ZeroTrueValue(DataError):
    pass

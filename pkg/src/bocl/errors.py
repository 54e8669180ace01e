"""Exception hierarchy shared by all bocl modules."""


class BoclError(Exception):
    """Base class for every error raised by this package."""


class NotPositiveDefinite(BoclError, ValueError):
    pass


class DimensionMismatch(BoclError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class NonFiniteObjective(BoclError, FloatingPointError):
    pass


class InvalidSpec(BoclError, ValueError):
    pass


class BoundsViolation(BoclError, ValueError):
    pass


class EmptyDataset(BoclError, ValueError):
    pass


class SearchSpaceExhausted(BoclError):
    """Every integer point of the search box has already been evaluated."""


class IdxFormatError(BoclError, ValueError):
    pass


class BadMagic(IdxFormatError):
    pass


class TruncatedFile(IdxFormatError):
    pass


class CountMismatch(IdxFormatError):
    pass


class AngleOutOfRange(BoclError, ValueError):
    pass


class ConfigError(BoclError, ValueError):
    pass


class MissingReport(BoclError, FileNotFoundError):
    pass

"""Exception hierarchy shared by every module."""


class AGFilterError(Exception):
    """Base class for all errors raised by the package."""


class ValidationError(AGFilterError, ValueError):
    """Inputs violate a shape, range or parameter contract."""


class ShapeMismatch(ValidationError):
    pass


class DivisionNearZero(ValidationError):
    pass


class InvalidDimension(ValidationError):
    pass


class NonFiniteValue(ValidationError):
    pass


class ValueOutOfRange(ValidationError):
    pass


class NonPositiveGamma(ValidationError):
    pass


class RadiusTooLarge(ValidationError):
    pass


class AttentionOutOfRange(ValidationError):
    pass


class WeightDimensionMismatch(ValidationError):
    pass


class NonBinaryInput(ValidationError):
    pass


class DegenerateLabels(ValidationError):
    pass


class EmptyUnion(ValidationError):
    pass


class FormatError(AGFilterError):
    """A file on disk does not follow its declared format."""


class UnsupportedFormat(FormatError):
    pass


class CorruptHeader(FormatError):
    pass


class TruncatedPayload(FormatError):
    pass


class MissingEntry(FormatError):
    pass


class DimensionMismatch(FormatError):
    pass


class NumericalError(AGFilterError, ArithmeticError):
    """A computation left its numerically valid regime."""


class DegenerateDenominator(NumericalError):
    pass


class DivergedLoss(NumericalError):
    pass

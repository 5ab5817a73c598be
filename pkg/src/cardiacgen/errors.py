"""Exception hierarchy shared by all cardiacgen modules."""


class CardiacGenError(Exception):
    """Base class for every error raised by this package."""


# signal processing
class EmptySignal(CardiacGenError, ValueError):
    pass


class NonPositiveRate(CardiacGenError, ValueError):
    pass


class CutoffOutOfRange(CardiacGenError, ValueError):
    pass


class NoPeaksFound(CardiacGenError):
    pass


class TooShort(CardiacGenError, ValueError):
    pass


class InsufficientPeaks(CardiacGenError, ValueError):
    pass


class InvalidTachogram(CardiacGenError, ValueError):
    pass


# dataset pipeline
class BlockTooLarge(CardiacGenError, ValueError):
    pass


class LabelOutOfRange(CardiacGenError, ValueError):
    pass


class SpecInvalid(CardiacGenError, ValueError):
    pass


class FormatVersionMismatch(CardiacGenError):
    pass


class CorruptFile(CardiacGenError):
    pass


# autodiff / networks
class ShapeMismatch(CardiacGenError, ValueError):
    pass


class NonScalarOutput(CardiacGenError, ValueError):
    pass


class NonDifferentiablePrimitive(CardiacGenError):
    pass


class StateSizeMismatch(CardiacGenError, ValueError):
    pass


class GridMismatch(CardiacGenError, ValueError):
    pass


# training
class BatchMismatch(CardiacGenError, ValueError):
    pass


class LengthMismatch(CardiacGenError, ValueError):
    pass


class NonFiniteLoss(CardiacGenError, FloatingPointError):
    pass


class NonConsecutiveWindows(CardiacGenError, ValueError):
    pass


class EmptySplit(CardiacGenError, ValueError):
    pass


# synthesis / evaluation
class NoCheckpoint(CardiacGenError):
    pass


class InsufficientSynthWindows(CardiacGenError, ValueError):
    pass


class EmptyInput(CardiacGenError, ValueError):
    pass


class TooFewValues(CardiacGenError, ValueError):
    pass


class TooFewIntervals(CardiacGenError, ValueError):
    pass


# cli
class UnknownCommand(CardiacGenError):
    pass


class BadConfig(CardiacGenError, ValueError):
    pass

"""Exception types raised across the pipeline."""


class ColonmarkError(Exception):
    """Base class for every error raised by this package."""


# imaging
class DegenerateImage(ColonmarkError, ValueError):
    pass


class RectOutOfBounds(ColonmarkError, ValueError):
    pass


# dataset
class ParseError(ColonmarkError, ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class DuplicateFrame(ColonmarkError, ValueError):
    pass


class VideoLeak(ColonmarkError, ValueError):
    """A snapshot video id also appears in the TRAIN/VAL/TEST pool."""


class NoConsensus(ColonmarkError, ValueError):
    pass


class InsufficientVideos(ColonmarkError, ValueError):
    pass


class EmptySplit(ColonmarkError, ValueError):
    pass


# sampling
class MissingTrainClass(ColonmarkError, ValueError):
    pass


class AllClassesExcluded(ColonmarkError, ValueError):
    pass


# autodiff / model
class ShapeMismatch(ColonmarkError, ValueError):
    pass


class NotScalarLoss(ColonmarkError, ValueError):
    pass


class EmptyTape(ColonmarkError, RuntimeError):
    pass


class InvalidConfig(ColonmarkError, ValueError):
    pass


# training
class NonFiniteLoss(ColonmarkError, ArithmeticError):
    def __init__(self, message: str, batch_indices=()):
        super().__init__(message)
        self.batch_indices = list(batch_indices)


class EmptyTrainSplit(ColonmarkError, ValueError):
    pass


class CheckpointError(ColonmarkError, ValueError):
    pass


class BadMagic(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class Truncated(CheckpointError):
    pass


# evaluation
class EmptyMatrix(ColonmarkError, ValueError):
    pass


class DegenerateData(ColonmarkError, ValueError):
    pass

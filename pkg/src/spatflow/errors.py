"""Exception hierarchy shared by every stage of the pipeline."""


class SpatflowError(Exception):
    """Base class; the CLI maps these to exit code 3."""


class ValidationError(SpatflowError, ValueError):
    """Bad user input or violated precondition (CLI exit code 2)."""


class TooFewPoints(SpatflowError):
    pass


class DegenerateConfiguration(SpatflowError):
    pass


class BehindCamera(SpatflowError):
    pass


class NonPositiveDepth(SpatflowError):
    pass


class ResolutionMismatch(SpatflowError):
    pass


class NoVisibleSample(SpatflowError):
    pass


class InvalidSpec(ValidationError):
    pass


class LabelOutOfRange(SpatflowError):
    pass


class DimensionMismatch(SpatflowError):
    pass


class EmptyCloud(SpatflowError):
    pass


class InvalidSeed(SpatflowError):
    pass


class IndexOutOfRange(SpatflowError, IndexError):
    pass


class EmptySequence(SpatflowError):
    pass


class TooSmall(SpatflowError):
    pass


class DegenerateCloud(SpatflowError):
    pass


class LabelCountMismatch(SpatflowError):
    pass


class EmptyForeground(SpatflowError):
    pass


class ParseError(SpatflowError):
    """Malformed input file; ``where`` names the offending line or byte offset."""

    def __init__(self, message, where=None):
        self.where = where
        super().__init__(f"{message} ({where})" if where is not None else message)


class StageError(SpatflowError):
    """Wraps a failure with the pipeline stage it happened in."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")

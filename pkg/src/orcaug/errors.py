"""Exception types shared across the pipeline."""


class OrcaugError(Exception):
    """Base class for all pipeline errors."""


class DecodeError(OrcaugError):
    """File could not be read or decoded as audio."""


class UpsampleRefusedError(OrcaugError):
    """Source sample rate is below the target rate; only downsampling is supported."""


class InsufficientAudioError(OrcaugError):
    """Audio is too short for the requested window or analysis frame."""


class FormatError(OrcaugError):
    """A serialized artifact (tensor file, checkpoint, CSV) is malformed."""


class AnnotationError(FormatError):
    """An annotation row failed validation; carries the offending line number."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class ValidationError(OrcaugError):
    """A precondition on operation inputs was violated."""


class InsufficientBackgroundError(OrcaugError):
    """A file's non-annotated region cannot fit a background window."""


class EmptyDatasetError(ValidationError):
    """No samples available to build or train from."""


class NumericalError(OrcaugError):
    """A computation produced non-finite values."""


class DivergenceError(NumericalError):
    """Training loss became non-finite; carries the epoch index."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class ShortfallError(OrcaugError):
    """A generator could not supply enough post-filter samples for the budget."""

    def __init__(self, message, deficit=None):
        super().__init__(message)
        self.deficit = deficit


class DisjointnessError(OrcaugError):
    """A training source file also contributes to the test set."""

"""Exception types shared across the retrieval pipeline.

Every error carries an ``exit_code`` used by the command-line layer:
2 usage, 3 data error, 4 artifact mismatch, 5 degenerate query.
"""


class BovwError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 3


# --- image I/O ---------------------------------------------------------------

class UnsupportedFormatError(BovwError):
    """Input file is not an accepted 8-bit grayscale format."""


class CorruptImageError(BovwError):
    """Image header and payload disagree, or the payload is unreadable."""


class EmptyRectangleError(BovwError):
    """Requested rectangle lies entirely outside the image."""


# --- feature detection -------------------------------------------------------

class ImageTooSmallError(BovwError):
    """Image is smaller than the smallest detection filter."""


class WindowOutOfBoundsError(BovwError):
    """Descriptor sampling window does not fit inside the image."""


# --- vocabulary --------------------------------------------------------------

class EmptyImageError(BovwError):
    """An image with zero descriptors reached feature pruning."""


class InsufficientDataError(BovwError):
    """Too few descriptors to compute pooled statistics."""


class TooFewPointsError(BovwError):
    """Requested more clusters than there are distinct points."""


class NonFiniteInputError(BovwError):
    """Input vectors contain NaN or infinity."""


# --- encoding / classification ----------------------------------------------

class EmptyCorpusError(BovwError):
    """No images supplied where at least one is required."""


class SingleClassError(BovwError):
    """Training data covers fewer than two classes."""


class DegenerateInputError(BovwError):
    """Training features include all-zero histograms."""


class NonFiniteLossError(BovwError):
    """Training objective diverged to NaN or infinity."""


class DimensionMismatchError(BovwError):
    """Feature dimension disagrees between model, vocabulary or histograms."""


# --- retrieval / evaluation --------------------------------------------------

class EmptyIndexError(BovwError):
    """Query issued against an index with no images."""


class DegenerateQueryError(BovwError):
    """Query image yielded no usable descriptors."""

    exit_code = 5


class InsufficientResultsError(BovwError):
    """Fewer ranked results than the requested cutoff."""


class NoQueriesError(BovwError):
    """Metric aggregation over an empty query set."""


class ClassTooSmallError(BovwError):
    """A class has too few images to be split into train and test."""


# --- artifacts ---------------------------------------------------------------

class ArtifactMismatchError(BovwError):
    """On-disk artifacts are inconsistent with the build manifest."""

    exit_code = 4


class CorruptArtifactError(BovwError):
    """Artifact file has a bad magic, truncated payload or invalid field."""

    exit_code = 4


# --- pipeline / command line -------------------------------------------------

class UsageError(BovwError):
    """Caller error: bad flags, malformed or incomplete configuration."""

    exit_code = 2


class ConfigError(UsageError):
    """Configuration file cannot be parsed or contains invalid values."""


class DatasetError(BovwError):
    """Dataset directory is missing, empty or malformed."""


class StageError(BovwError):
    """A pipeline stage failed; wraps the cause and keeps its exit code.

    ``stage`` names the failed step so command output can report where
    the pipeline stopped.
    """

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = cause.exit_code if isinstance(cause, BovwError) else 3

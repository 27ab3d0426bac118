"""Exception types shared by all vishud modules."""


class VishudError(Exception):
    """Base class for every error raised by this package."""


# --- raster ---

class UnsupportedMagicError(VishudError):
    """The byte stream does not start with a supported netpbm magic (P5/P6)."""


class BadHeaderError(VishudError):
    """A netpbm header is syntactically invalid (non-numeric or missing fields)."""


class TruncatedPayloadError(VishudError):
    """A netpbm payload holds fewer pixel bytes than the header promises."""


class AngleOutOfRangeError(VishudError):
    """Rotation angle outside the supported augmentation range."""


class DimensionMismatchError(VishudError):
    """Two rasters that must share dimensions do not."""


# --- gridcodec ---

class DegenerateBoxError(VishudError):
    """Box coordinates violate x1 < x2, y1 < y2 or are not finite."""


# --- network ---

class BadConfigError(VishudError):
    """A configuration object is internally inconsistent."""


class ShapeMismatchError(VishudError):
    """Tensor shapes do not line up with what an operation expects."""


class CacheMismatchError(VishudError):
    """A forward cache does not belong to the given parameters/config."""


class CheckpointError(VishudError):
    """A parameter checkpoint is corrupt or was written for another config."""


# --- training ---

class EmptyBatchError(VishudError):
    """A loss was asked to reduce over zero samples."""


# --- datasets ---

class MalformedBoxLineError(VishudError):
    """A line that starts like a bounding-box annotation fails its grammar."""


class MissingFilenameError(VishudError):
    """A per-image annotation file carries no image filename."""


class MalformedRecordError(VishudError):
    """A record line (IDL annotation, detections file) fails its grammar."""


class BadFractionsError(VishudError):
    """Split fractions do not sum to one."""


# --- evaluation ---

class NoGroundTruthError(VishudError):
    """An evaluation was requested over zero ground-truth boxes."""


class EmptyCurveError(VishudError):
    """Log-average miss rate needs at least one curve point."""

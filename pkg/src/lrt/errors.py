"""Exception types raised across the package.

Everything derives from LrtError so callers can catch the whole family;
most types also subclass the closest builtin so generic handlers keep
working (e.g. ShapeError is a ValueError).
"""


class LrtError(Exception):
    """Base class for all package errors."""


class ShapeError(LrtError, ValueError):
    """Array arguments have inconsistent or unexpected shapes."""


class LengthError(LrtError, ValueError):
    """Byte stream length does not match the record layout."""


class DecodeError(LrtError, ValueError):
    """Decoded values violate the format contract (NaN/Inf payloads)."""


class FormatError(LrtError, ValueError):
    """File container is malformed (bad magic, header, dimensionality)."""


class DTypeError(LrtError, TypeError):
    """Element type is not supported by the codec."""


class SchemaError(LrtError, ValueError):
    """Configuration document violates the schema; names the offending key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class EmptyCloudError(LrtError, ValueError):
    """Operation requires a nonempty point cloud."""


class DegenerateSensorError(LrtError, ValueError):
    """Sensor geometry violates 0 < fov_up < fov_total <= 180 or size bounds."""


class KernelError(LrtError, ValueError):
    """Structuring element dimensions must be odd and >= 1."""


class MaskOverlapError(LrtError, ValueError):
    """Repair mask overlaps the valid-pixel mask."""


class NoValidPixelError(LrtError, ValueError):
    """Nearest-neighbor fill needs at least one valid pixel."""


class NotNormalizedError(LrtError, ValueError):
    """Per-pixel class scores must sum to 1."""


class AllIgnoredError(LrtError, ValueError):
    """Loss is undefined when every pixel carries the ignore label."""


class EmptyBatchError(LrtError, ValueError):
    """Loss term requires a nonempty batch."""


class ClassRangeError(LrtError, ValueError):
    """Class id outside [0, num_classes)."""


class EmptyMatrixError(LrtError, ValueError):
    """Confusion matrix holds no scored samples."""

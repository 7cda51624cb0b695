"""Exception hierarchy shared across the package.

The CLI maps the three roots onto exit codes: UsageError -> 1,
DataError -> 2, NumericalError -> 3.
"""


class UpwError(Exception):
    """Base class for every error raised by this package."""


class UsageError(UpwError):
    """Invalid arguments or parameters supplied by the caller."""


class DataError(UpwError):
    """Malformed, inconsistent, or corrupt input data."""


class NumericalError(UpwError):
    """Non-finite values or a failed numerical verification."""


class InvalidFactorError(UsageError):
    """Folding factor outside the supported set."""


class InvalidTokenError(DataError):
    """Token id outside the valid range for its vocabulary."""


class EmptyImageError(DataError):
    """Image or grid with a zero dimension where content is required."""


class EmptyInputError(DataError):
    """Operation requires a non-empty sequence."""


class AlignmentError(UsageError):
    """Dimensions not divisible as required (pad or re-chunk first)."""


class ShapeError(UsageError):
    """Tensor shapes incompatible with the requested operation."""


class ConfigError(UsageError):
    """Configuration values violate a model invariant."""


class FormatError(DataError):
    """Byte stream does not match the expected container layout."""


class TruncationError(DataError):
    """Byte stream ended before a declared field or payload completed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class EncodingError(DataError):
    """Payload bytes are not valid for their declared encoding."""


class CorruptionError(DataError):
    """Structurally impossible field values inside a container."""

"""Exception hierarchy for the codec.

Exit-code mapping for the CLI lives in cli.py: usage/parameter errors,
format errors, numerical errors, and resource/storage errors each get a
distinct nonzero code.
"""


class CodecError(Exception):
    """Base class for all rocodec errors."""


class InvalidParameterError(CodecError, ValueError):
    """A caller-supplied parameter violates a precondition."""


class FormatError(CodecError):
    """A byte stream or file does not conform to its declared format.

    ``offset`` is the byte position at which the inconsistency was
    detected, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(CodecError):
    """A numerical guarantee failed (non-SPD pivot, residual too large)."""


class FrameConditionError(NumericalError):
    """An observed energy ratio fell outside the analytic frame bounds."""

    def __init__(self, message: str, ratio: float):
        super().__init__(f"{message} (offending ratio {ratio!r})")
        self.ratio = ratio


class ResourceError(CodecError):
    """A preflight estimate exceeded a configured memory or disk cap."""


class StorageError(CodecError):
    """Block-store I/O failure or manifest corruption."""


class CacheCorruptionError(StorageError):
    """A dual-operator cache failed its checksum or residual guard."""


class CacheMissingError(StorageError):
    """A dual decode was requested but no cache entry exists."""

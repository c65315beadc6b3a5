"""Exception types shared across the package."""


class ChromaTrackError(Exception):
    """Base class for all package errors."""


class ValidationError(ChromaTrackError, ValueError):
    """Input violates a documented precondition."""


class DimensionError(ValidationError):
    """Array shapes are incompatible."""


class NumericError(ChromaTrackError, ArithmeticError):
    """NaN or other non-finite value where a finite one is required."""


class ContractError(ChromaTrackError, RuntimeError):
    """API misuse, e.g. backward from a non-scalar."""


class ParseError(ChromaTrackError, ValueError):
    """Malformed file. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class CorruptionError(ChromaTrackError, IOError):
    """Checksum mismatch on load."""


class VersionError(ChromaTrackError, IOError):
    """File written by an unsupported format version."""

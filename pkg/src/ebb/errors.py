"""Exception types shared by the EBB modules."""

from __future__ import annotations


class EbbError(Exception):
    """Base class for every error raised by this package."""


class UnknownLabel(EbbError, KeyError):
    def __init__(self, record_type: str, label: str):
        super().__init__(f"label {label!r} is not defined for {record_type} records")
        self.record_type = record_type
        self.label = label

    def __str__(self) -> str:
        return self.args[0]


class InvalidRecord(EbbError, ValueError):
    """A record failed validation; ``violations`` lists every problem found."""

    def __init__(self, violations, message: str | None = None):
        self.violations = list(violations)
        if message is None:
            message = "; ".join(str(v) for v in self.violations) or "invalid record"
        super().__init__(message)


class RangeViolation(InvalidRecord):
    """A field value is outside the range its format allows."""


class Oversize(EbbError, ValueError):
    pass


# -- decoding ---------------------------------------------------------------


class DecodeError(EbbError, ValueError):
    """Raised when bytes cannot be turned back into a record."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class BadTag(DecodeError):
    pass


class TruncatedRecord(DecodeError):
    pass


class ChecksumMismatch(DecodeError):
    def __init__(self, expected: str, actual: str, offset: int | None = None):
        super().__init__(f"checksum mismatch: computed {expected}, stored {actual}", offset)
        self.expected = expected
        self.actual = actual


class FieldFormatError(DecodeError):
    def __init__(self, label: str, offset: int, reason: str):
        super().__init__(f"{label} at byte {offset}: {reason}", offset)
        self.label = label
        self.reason = reason


class CountMismatch(DecodeError):
    pass


# -- storage ----------------------------------------------------------------


class StoreError(EbbError):
    pass


class Exists(StoreError, FileExistsError):
    pass


class MdTooLarge(StoreError, ValueError):
    pass


class GeometryInvalid(StoreError, ValueError):
    pass


class RecordTooLarge(StoreError, ValueError):
    pass


class NotAnRd(StoreError, ValueError):
    pass


class StoreFormatError(StoreError, ValueError):
    """The file is not an EBB media image (bad preamble or size)."""


# -- simulation / transport -------------------------------------------------


class ScriptInvalid(EbbError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TargetUnavailable(EbbError, ConnectionError):
    pass


class RejectedRecord(EbbError):
    def __init__(self, code: str, index: int):
        super().__init__(f"record {index} rejected by daemon: ERR {code}")
        self.code = code
        self.index = index

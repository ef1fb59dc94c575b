"""EBB record domain types, field catalogs and structural validation.

Three record types share one layout: a two-letter tag, then ``recS``,
``ebbD`` and ``ebbT``, the type-specific data fields, and finally ``chkS``.
The four housekeeping fields are held as explicit attributes of
:class:`Record`; everything else lives in ``Record.fields`` in catalog order.

Labels are namespaced per record type: ``ebbN`` is a string in MD (EBB name
and version) but a 10-digit count in DD.
"""

from __future__ import annotations

import datetime as _dt
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Union

from .errors import InvalidRecord, RangeViolation, UnknownLabel

MAX_FIELDS = 999
MAX_CHARS = 99_999_999
MAX_BLOB = 99_999_999


class RecordType(str, Enum):
    MD = "MD"
    DD = "DD"
    RD = "RD"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def coerce(cls, value: RecordType | str) -> RecordType:
        try:
            return cls(value)
        except ValueError:
            raise ValueError(f"invalid record type {value!r}") from None


class Kind(Enum):
    DATE = "date"
    TIME = "time"
    RECSIZE = "recsize"
    STRING = "string"
    FIXED = "fixed"
    BLOB = "blob"
    SYSX = "sysx"
    CHECKSUM = "checksum"
    WIFI = "wifi"
    DECISION = "decision"


# -- value types ------------------------------------------------------------

_DATE_RE = re.compile(r"^(\d{4}):(\d{2}):(\d{2})$")
_TIME_RE = re.compile(r"^(\d{2}):(\d{2}):(\d{2}):(\d{3})$")
_RECSIZE_RE = re.compile(r"^(\d{3}):(\d{8})$")


@dataclass(frozen=True, order=True)
class EbbDate:
    year: int
    month: int
    day: int

    def __str__(self) -> str:
        return f"{self.year:04d}:{self.month:02d}:{self.day:02d}"

    @classmethod
    def parse(cls, text: str) -> EbbDate:
        m = _DATE_RE.match(text)
        if not m:
            raise ValueError(f"date {text!r} is not yyyy:mm:dd")
        return cls(*(int(g) for g in m.groups()))

    @classmethod
    def from_date(cls, d: _dt.date) -> EbbDate:
        return cls(d.year, d.month, d.day)

    @property
    def is_sentinel(self) -> bool:
        return self.year == self.month == self.day == 0

    def problem(self) -> str | None:
        """Describe why this is not a real calendar date, or None if it is."""
        try:
            _dt.date(self.year, self.month, self.day)
        except (ValueError, TypeError) as exc:
            return str(exc)
        return None

    def to_date(self) -> _dt.date:
        return _dt.date(self.year, self.month, self.day)


@dataclass(frozen=True, order=True)
class EbbTime:
    hour: int
    minute: int
    second: int
    millisecond: int = 0

    def __str__(self) -> str:
        return f"{self.hour:02d}:{self.minute:02d}:{self.second:02d}:{self.millisecond:03d}"

    @classmethod
    def parse(cls, text: str) -> EbbTime:
        m = _TIME_RE.match(text)
        if not m:
            raise ValueError(f"time {text!r} is not hh:mm:ss:ms")
        return cls(*(int(g) for g in m.groups()))

    @classmethod
    def from_time(cls, t: _dt.time | _dt.datetime) -> EbbTime:
        return cls(t.hour, t.minute, t.second, t.microsecond // 1000)

    def problem(self) -> str | None:
        if not 0 <= self.hour <= 23:
            return f"hour {self.hour} not in 00..23"
        if not 0 <= self.minute <= 59:
            return f"minute {self.minute} not in 00..59"
        if not 0 <= self.second <= 59:
            return f"second {self.second} not in 00..59"
        if not 0 <= self.millisecond <= 999:
            return f"millisecond {self.millisecond} not in 000..999"
        return None

    def to_time(self) -> _dt.time:
        return _dt.time(self.hour, self.minute, self.second, self.millisecond * 1000)


SENTINEL_DATE = EbbDate(0, 0, 0)
SENTINEL_TIME = EbbTime(0, 0, 0, 0)


def to_datetime(date: EbbDate, time: EbbTime) -> _dt.datetime:
    return _dt.datetime.combine(date.to_date(), time.to_time())


def from_datetime(moment: _dt.datetime) -> tuple[EbbDate, EbbTime]:
    return EbbDate.from_date(moment), EbbTime.from_time(moment)


@dataclass(frozen=True)
class RecSize:
    field_count: int
    char_count: int

    def __str__(self) -> str:
        return f"{self.field_count:03d}:{self.char_count:08d}"

    @classmethod
    def parse(cls, text: str) -> RecSize:
        m = _RECSIZE_RE.match(text)
        if not m:
            raise ValueError(f"record size {text!r} is not 000:00000000")
        return cls(int(m.group(1)), int(m.group(2)))


@dataclass(frozen=True)
class Str:
    text: str


@dataclass(frozen=True)
class FixedNum:
    """Fixed-width numeric text such as ``001:-0175.54``; kept verbatim."""

    text: str

    def numbers(self) -> list[float]:
        return [float(part) for part in self.text.split(":")]


@dataclass(frozen=True)
class Blob:
    device: int
    payload: bytes = field(repr=False)

    @property
    def byte_len(self) -> int:
        return len(self.payload)


@dataclass(frozen=True)
class SysX:
    index: int
    text: str


@dataclass(frozen=True)
class Wifi:
    status: int
    strength: int


@dataclass(frozen=True)
class Decision:
    code: int
    reason: str = ""


Value = Union[EbbDate, EbbTime, RecSize, Str, FixedNum, Blob, SysX, Wifi, Decision, str]

KIND_TYPES: dict[Kind, type] = {
    Kind.DATE: EbbDate,
    Kind.TIME: EbbTime,
    Kind.RECSIZE: RecSize,
    Kind.STRING: Str,
    Kind.FIXED: FixedNum,
    Kind.BLOB: Blob,
    Kind.SYSX: SysX,
    Kind.CHECKSUM: str,
    Kind.WIFI: Wifi,
    Kind.DECISION: Decision,
}


# -- catalogs ---------------------------------------------------------------


@dataclass(frozen=True)
class FieldSpec:
    record_type: RecordType
    label: str
    kind: Kind
    length: int | None  # fixed data width in chars, None when variable
    required: bool
    repeatable: bool = False
    pattern: str | None = None  # FIXED kinds: '0' digit, '±' sign, other chars literal
    media: str | None = None  # BLOB kinds: 'wav' or 'jpg'
    description: str = ""

    @property
    def requirement(self) -> str:
        return "required" if self.required else "optional"


def _header(rt: RecordType) -> list[FieldSpec]:
    return [
        FieldSpec(rt, "recS", Kind.RECSIZE, 12, True, description="record size, fields and chars"),
        FieldSpec(rt, "ebbD", Kind.DATE, 10, True, description="EBB date record written"),
        FieldSpec(rt, "ebbT", Kind.TIME, 12, True, description="EBB time record written"),
    ]


def _chks(rt: RecordType) -> FieldSpec:
    return FieldSpec(rt, "chkS", Kind.CHECKSUM, 8, True, description="checksum for complete record")


def _fixed(rt, label, pattern, required=False, repeatable=False, description=""):
    return FieldSpec(rt, label, Kind.FIXED, len(pattern), required, repeatable, pattern=pattern,
                     description=description)


_MD, _DD, _RD = RecordType.MD, RecordType.DD, RecordType.RD

CATALOG: dict[RecordType, tuple[FieldSpec, ...]] = {
    _MD: tuple(_header(_MD) + [
        FieldSpec(_MD, "botN", Kind.STRING, None, True, description="robot name"),
        FieldSpec(_MD, "botV", Kind.STRING, None, False, description="robot version no"),
        FieldSpec(_MD, "botS", Kind.STRING, None, False, description="robot serial no"),
        FieldSpec(_MD, "botM", Kind.STRING, None, True, description="robot manufacturer"),
        FieldSpec(_MD, "opeR", Kind.STRING, None, False, description="robot operator"),
        FieldSpec(_MD, "resP", Kind.STRING, None, True,
                  description="name and contact details of responsible person"),
        FieldSpec(_MD, "ebbN", Kind.STRING, None, True, description="EBB name and version no"),
        _chks(_MD),
    ]),
    _DD: tuple(_header(_DD) + [
        _fixed(_DD, "ebbN", "0000000000", True, description="total number of RD records stored"),
        _fixed(_DD, "ebbX", "0" * 16, True, description="byte offset of next writable RD position"),
        FieldSpec(_DD, "ebD1", Kind.DATE, 10, True, description="date of oldest RD record"),
        FieldSpec(_DD, "ebT1", Kind.TIME, 12, True, description="time of oldest RD record"),
        FieldSpec(_DD, "ebDM", Kind.DATE, 10, True, description="date of most recent RD record"),
        FieldSpec(_DD, "ebTM", Kind.TIME, 12, True, description="time of most recent RD record"),
        FieldSpec(_DD, "sysX", Kind.SYSX, None, False, True, description="manufacturer definable"),
        _chks(_DD),
    ]),
    _RD: tuple(_header(_RD) + [
        FieldSpec(_RD, "botT", Kind.TIME, 12, True, description="robot time"),
        _fixed(_RD, "actD", "000:±0000.00", repeatable=True, description="actuator no and demand"),
        _fixed(_RD, "actV", "000:±0000.00", repeatable=True, description="actuator no and actual value"),
        _fixed(_RD, "batL", "000", description="battery level"),
        _fixed(_RD, "tchS", "00:000", repeatable=True, description="touch sensor no and value"),
        _fixed(_RD, "irSe", "00:000", repeatable=True, description="infra red sensor no and value"),
        _fixed(_RD, "lfSe", "00:000", repeatable=True, description="line following sensor no and value"),
        _fixed(_RD, "gyrV", "00:±0000:±0000:±0000", repeatable=True, description="gyro no and value"),
        _fixed(_RD, "accV", "00:±0000:±0000:±0000", repeatable=True,
               description="accelerometer no and value"),
        _fixed(_RD, "tmpV", "00:±0000", repeatable=True, description="temperature sensor no and value"),
        FieldSpec(_RD, "micI", Kind.BLOB, None, False, True, media="wav",
                  description="microphone no and input"),
        FieldSpec(_RD, "camF", Kind.BLOB, None, False, True, media="jpg",
                  description="camera no and frame grab"),
        FieldSpec(_RD, "txtC", Kind.STRING, None, False, True, description="text input command"),
        FieldSpec(_RD, "txtR", Kind.STRING, None, False, True, description="text reply"),
        FieldSpec(_RD, "decC", Kind.DECISION, None, False, True,
                  description="robot decision code and reason"),
        FieldSpec(_RD, "wifi", Kind.WIFI, 4, False, description="WiFi status and signal strength"),
        FieldSpec(_RD, "sysX", Kind.SYSX, None, False, True, description="manufacturer definable"),
        _chks(_RD),
    ]),
}

HOUSED_LABELS = frozenset({"recS", "ebbD", "ebbT", "chkS"})
_SENTINEL_OK = {(RecordType.DD, "ebD1"), (RecordType.DD, "ebDM")}

_INDEX: dict[RecordType, dict[str, int]] = {
    rt: {spec.label: i for i, spec in enumerate(specs)} for rt, specs in CATALOG.items()
}
_PATTERNS: dict[str, re.Pattern] = {}


def catalog_lookup(record_type: RecordType | str, label: str) -> FieldSpec:
    rt = RecordType.coerce(record_type)
    try:
        return CATALOG[rt][_INDEX[rt][label]]
    except KeyError:
        raise UnknownLabel(rt.value, label) from None


def pattern_regex(pattern: str) -> re.Pattern:
    rx = _PATTERNS.get(pattern)
    if rx is None:
        parts = []
        for ch in pattern:
            if ch == "0":
                parts.append("[0-9]")
            elif ch == "±":
                parts.append("[+-]")
            else:
                parts.append(re.escape(ch))
        rx = _PATTERNS[pattern] = re.compile("^" + "".join(parts) + "$")
    return rx


# -- records ----------------------------------------------------------------


@dataclass(frozen=True)
class Field:
    label: str
    value: Value

    def __repr__(self) -> str:
        return f"Field({self.label!r}, {self.value!r})"


@dataclass(frozen=True)
class Record:
    record_type: RecordType
    ebb_date: EbbDate
    ebb_time: EbbTime
    rec_size: RecSize
    fields: tuple[Field, ...]
    checksum: str

    @property
    def timestamp(self) -> tuple[EbbDate, EbbTime]:
        return (self.ebb_date, self.ebb_time)

    def values(self, label: str) -> list[Value]:
        return [f.value for f in self.fields if f.label == label]

    def first(self, label: str, default=None):
        for f in self.fields:
            if f.label == label:
                return f.value
        return default

    def labels(self) -> list[str]:
        return [f.label for f in self.fields]


@dataclass(frozen=True)
class Violation:
    kind: str
    label: str | None
    rule: str
    observed: object = None

    def __str__(self) -> str:
        where = f"{self.label}: " if self.label else ""
        seen = f" (observed {self.observed!r})" if self.observed is not None else ""
        return f"{self.kind}: {where}{self.rule}{seen}"


def canonical_order(record_type: RecordType | str, fields: Iterable[Field]) -> tuple[Field, ...]:
    """Sort fields into catalog order, keeping repeated labels in instance order."""
    index = _INDEX[RecordType.coerce(record_type)]
    last = len(index)
    return tuple(sorted(fields, key=lambda f: index.get(f.label, last)))


def _value_problem(rt: RecordType, spec: FieldSpec, value: Value) -> str | None:
    kind = spec.kind
    if kind is Kind.DATE:
        if value.is_sentinel and (rt, spec.label) in _SENTINEL_OK:
            return None
        return value.problem()
    if kind is Kind.TIME:
        return value.problem()
    if kind is Kind.STRING:
        return "string contains NUL" if "\0" in value.text else None
    if kind is Kind.FIXED:
        if not isinstance(value.text, str) or not pattern_regex(spec.pattern).match(value.text):
            return f"does not match format {spec.pattern}"
        return None
    if kind is Kind.BLOB:
        if not 0 <= value.device <= 99:
            return f"device number {value.device} not in 00..99"
        if not isinstance(value.payload, (bytes, bytearray)):
            return "payload is not bytes"
        if value.byte_len > MAX_BLOB:
            return f"payload of {value.byte_len} bytes exceeds {MAX_BLOB}"
        return None
    if kind is Kind.SYSX:
        if not 0 <= value.index <= 99:
            return f"sysX index {value.index} not in 00..99"
        return "string contains NUL" if "\0" in value.text else None
    if kind is Kind.WIFI:
        if value.status not in (0, 1):
            return f"status must be 0 or 1, got {value.status}"
        if not 0 <= value.strength <= 99:
            return f"signal strength {value.strength} not in 00..99"
        return None
    if kind is Kind.DECISION:
        if not 0 <= value.code <= 9999:
            return f"decision code {value.code} not in 0000..9999"
        return "string contains NUL" if "\0" in value.reason else None
    return None


_BLOCKING = {"UnknownLabel", "KindMismatch", "HousedField", "BadRecordType"}


def validate_record(record: Record, *, integrity: bool = True) -> list[Violation]:
    """Check a record against its catalog.

    Returns an empty list when the record is conformant. With ``integrity``
    the embedded ``recS`` counts and ``chkS`` are also compared against a
    fresh canonical encoding.
    """
    out: list[Violation] = []
    try:
        rt = RecordType.coerce(record.record_type)
    except ValueError:
        return [Violation("BadRecordType", None, "tag must be MD, DD or RD", record.record_type)]

    if not isinstance(record.ebb_date, EbbDate):
        out.append(Violation("KindMismatch", "ebbD", "expected a date", record.ebb_date))
    elif (p := record.ebb_date.problem()) is not None:
        out.append(Violation("RangeViolation", "ebbD", p, str(record.ebb_date)))
    if not isinstance(record.ebb_time, EbbTime):
        out.append(Violation("KindMismatch", "ebbT", "expected a time", record.ebb_time))
    elif (p := record.ebb_time.problem()) is not None:
        out.append(Violation("RangeViolation", "ebbT", p, str(record.ebb_time)))

    index = _INDEX[rt]
    seen: set[str] = set()
    last = -1
    for f in record.fields:
        if f.label in HOUSED_LABELS:
            out.append(Violation("HousedField", f.label, "held as a record attribute, not a field"))
            continue
        try:
            spec = catalog_lookup(rt, f.label)
        except UnknownLabel:
            out.append(Violation("UnknownLabel", f.label, f"not defined for {rt.value}"))
            continue
        if not isinstance(f.value, KIND_TYPES[spec.kind]):
            out.append(Violation("KindMismatch", f.label, f"expected {spec.kind.value}",
                                 type(f.value).__name__))
            seen.add(f.label)
            continue
        problem = _value_problem(rt, spec, f.value)
        if problem is not None:
            out.append(Violation("RangeViolation", f.label, problem, show_value(f.value)))
        if f.label in seen and not spec.repeatable:
            out.append(Violation("DuplicateField", f.label, "field may appear only once"))
        pos = index[f.label]
        if pos < last:
            out.append(Violation("OrderViolation", f.label, "fields must follow catalog order"))
        last = max(last, pos)
        seen.add(f.label)

    for spec in CATALOG[rt]:
        if spec.required and spec.label not in HOUSED_LABELS and spec.label not in seen:
            out.append(Violation("MissingRequiredField", spec.label, "required field absent"))

    if integrity and not any(v.kind in _BLOCKING for v in out):
        from . import codec

        try:
            expected_size, expected_sum = codec.measure(record)
        except Exception as exc:  # encoding limits (Oversize)
            out.append(Violation("RangeViolation", "recS", str(exc)))
        else:
            if record.rec_size != expected_size:
                out.append(Violation("CountMismatch", "recS", f"should be {expected_size}",
                                     str(record.rec_size)))
            if record.checksum != expected_sum:
                out.append(Violation("ChecksumMismatch", "chkS", f"should be {expected_sum}",
                                     record.checksum))
    return out


def show_value(value: Value) -> str:
    if isinstance(value, (Str, FixedNum)):
        return value.text
    if isinstance(value, Wifi):
        return f"{value.status}:{value.strength:02d}"
    if isinstance(value, Blob):
        return f"{value.device:02d}:{value.byte_len}"
    if isinstance(value, SysX):
        return f"{value.index:02d}:{value.text}"
    if isinstance(value, Decision):
        return f"{value.code:04d}:{value.reason}"
    return str(value)


# -- construction -----------------------------------------------------------

_COLON_INTS = re.compile(r"^(\d+):(.*)$", re.S)


def make_value(spec: FieldSpec, raw) -> Value:
    """Coerce a convenient Python value into the catalog's value type.

    Text in the stored field notation is accepted for every kind, e.g.
    ``"1:99"`` for wifi or ``"0020:obstacle detected"`` for decC.
    """
    expected = KIND_TYPES[spec.kind]
    if isinstance(raw, expected) and spec.kind is not Kind.CHECKSUM:
        return raw
    kind = spec.kind
    try:
        if kind is Kind.DATE:
            return EbbDate.from_date(raw) if isinstance(raw, _dt.date) else EbbDate.parse(raw)
        if kind is Kind.TIME:
            if isinstance(raw, (_dt.time, _dt.datetime)):
                return EbbTime.from_time(raw)
            return EbbTime.parse(raw)
        if kind is Kind.STRING and isinstance(raw, str):
            return Str(raw)
        if kind is Kind.FIXED and isinstance(raw, str):
            return FixedNum(raw)
        if kind is Kind.BLOB and isinstance(raw, tuple):
            device, payload = raw
            return Blob(int(device), bytes(payload))
        if kind in (Kind.SYSX, Kind.DECISION, Kind.WIFI):
            if isinstance(raw, tuple):
                a, b = raw
            elif isinstance(raw, int) and kind is Kind.DECISION:
                a, b = raw, ""
            else:
                m = _COLON_INTS.match(raw)
                if not m:
                    raise ValueError(f"expected n:value, got {raw!r}")
                a, b = m.groups()
            if kind is Kind.SYSX:
                return SysX(int(a), str(b))
            if kind is Kind.DECISION:
                return Decision(int(a), str(b))
            return Wifi(int(a), int(b))
    except (ValueError, TypeError) as exc:
        raise RangeViolation([Violation("RangeViolation", spec.label, str(exc), raw)]) from None
    raise InvalidRecord([Violation("KindMismatch", spec.label, f"expected {kind.value}",
                                   type(raw).__name__)])


FieldInput = Union[Field, tuple]


def build_record(
    record_type: RecordType | str,
    date: EbbDate | str | _dt.date,
    time: EbbTime | str | _dt.time,
    fields: Iterable[FieldInput] | Mapping[str, object] = (),
) -> Record:
    """Assemble a canonical, checksummed record.

    ``fields`` may hold :class:`Field` objects or ``(label, value)`` pairs in
    any order; values are coerced with :func:`make_value`. Raises
    :class:`UnknownLabel` for labels outside the catalog and
    :class:`RangeViolation` / :class:`InvalidRecord` for bad content.
    """
    rt = RecordType.coerce(record_type)
    ebb_date = make_value(catalog_lookup(rt, "ebbD"), date)
    ebb_time = make_value(catalog_lookup(rt, "ebbT"), time)
    if isinstance(fields, Mapping):
        fields = fields.items()
    built = []
    for item in fields:
        label, raw = (item.label, item.value) if isinstance(item, Field) else item
        spec = catalog_lookup(rt, label)
        if label in HOUSED_LABELS:
            raise InvalidRecord([Violation("HousedField", label, "set by build_record itself")])
        built.append(Field(label, make_value(spec, raw)))

    draft = Record(rt, ebb_date, ebb_time, RecSize(0, 0), canonical_order(rt, built), "")
    problems = validate_record(draft, integrity=False)
    if problems:
        if all(v.kind == "RangeViolation" for v in problems):
            raise RangeViolation(problems)
        raise InvalidRecord(problems)

    from . import codec

    size, checksum = codec.measure(draft)
    return replace(draft, rec_size=size, checksum=checksum)

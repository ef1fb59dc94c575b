"""Bit-exact ASCII encoding of EBB records.

Wire and media layout of one record::

    TAG SP "recS" SP fff:cccccccc SP "ebbD" SP yyyy:mm:dd SP "ebbT" SP hh:mm:ss:mmm
        { SP LABEL SP DATA } SP "chkS" SP XXXXXXXX

Tokens are separated by a single space. Strings end in NUL (the NUL is part
of the data, the separating space follows it). Blobs are written as
``dd:llllllll:HEX`` where ``llllllll`` counts raw payload bytes. ``recS``
counts every field (itself and ``chkS`` included) and every byte from the
first tag character through the last checksum digit, so it alone frames the
record. ``chkS`` is FNV-1a 64 over all bytes before the checksum digits,
rendered as the low 32 bits in uppercase hex.
"""

from __future__ import annotations

import binascii
import re
from dataclasses import dataclass

from . import fnv
from .errors import (
    BadTag,
    ChecksumMismatch,
    CountMismatch,
    DecodeError,
    FieldFormatError,
    InvalidRecord,
    Oversize,
    TruncatedRecord,
    UnknownLabel,
)
from .model import (
    MAX_CHARS,
    MAX_FIELDS,
    Blob,
    Decision,
    EbbDate,
    EbbTime,
    Field,
    FixedNum,
    Kind,
    Record,
    RecordType,
    RecSize,
    Str,
    SysX,
    Wifi,
    catalog_lookup,
    pattern_regex,
    validate_record,
)

TAGS = (b"MD", b"DD", b"RD")
HEAD_LEN = 20  # b"RD recS 000:00000000"
TRAILER = b" chkS "
CHKS_LEN = 8
MIN_RECORD = HEAD_LEN + 16 + 18 + len(TRAILER) + CHKS_LEN

_HEAD_RE = re.compile(rb"(MD|DD|RD) recS (\d{3}):(\d{8})")
_HEX_UPPER = re.compile(rb"^[0-9A-F]{8}$")
_WIFI_RE = re.compile(rb"(\d):(\d\d)")
_SYSX_RE = re.compile(rb"(\d\d):")
_DEC_RE = re.compile(rb"(\d{4}):")
_BLOB_RE = re.compile(rb"(\d\d):(\d{8}):")


@dataclass(frozen=True)
class ChecksumValue:
    hash64: int

    @property
    def rendered(self) -> str:
        return fnv.render(self.hash64)

    def __str__(self) -> str:
        return self.rendered


def compute_checksum(data: bytes) -> ChecksumValue:
    """Hash the record bytes from the tag through ``"chkS "`` inclusive."""
    return ChecksumValue(fnv.fnv1a_64(data))


# -- encoding ---------------------------------------------------------------


def _text(s: str) -> bytes:
    return s.encode("utf-8", "surrogateescape")


def encode_value(kind: Kind, value) -> bytes:
    if kind in (Kind.DATE, Kind.TIME, Kind.RECSIZE):
        return str(value).encode("ascii")
    if kind is Kind.STRING:
        return _text(value.text) + b"\0"
    if kind is Kind.FIXED:
        return value.text.encode("ascii")
    if kind is Kind.BLOB:
        head = f"{value.device:02d}:{value.byte_len:08d}:".encode("ascii")
        return head + binascii.hexlify(value.payload).upper()
    if kind is Kind.SYSX:
        return f"{value.index:02d}:".encode("ascii") + _text(value.text) + b"\0"
    if kind is Kind.WIFI:
        return f"{value.status}:{value.strength:02d}".encode("ascii")
    if kind is Kind.DECISION:
        return f"{value.code:04d}:".encode("ascii") + _text(value.reason) + b"\0"
    raise ValueError(f"cannot encode kind {kind}")


def _assemble(record: Record) -> tuple[bytes, RecSize]:
    rt = RecordType.coerce(record.record_type)
    parts = [
        b" ebbD ", str(record.ebb_date).encode("ascii"),
        b" ebbT ", str(record.ebb_time).encode("ascii"),
    ]
    for f in record.fields:
        spec = catalog_lookup(rt, f.label)
        parts += [b" ", f.label.encode("ascii"), b" ", encode_value(spec.kind, f.value)]
    body = b"".join(parts)
    size = RecSize(len(record.fields) + 4, HEAD_LEN + len(body) + len(TRAILER) + CHKS_LEN)
    if size.field_count > MAX_FIELDS:
        raise Oversize(f"{size.field_count} fields exceeds the limit of {MAX_FIELDS}")
    if size.char_count > MAX_CHARS:
        raise Oversize(f"{size.char_count} chars exceeds the limit of {MAX_CHARS}")
    head = b"".join([rt.value.encode("ascii"), b" recS ", str(size).encode("ascii"), body, TRAILER])
    return head + fnv.checksum_text(head).encode("ascii"), size


def measure(record: Record) -> tuple[RecSize, str]:
    """The ``recS`` value and checksum a canonical encoding of ``record`` carries."""
    data, size = _assemble(record)
    return size, data[-CHKS_LEN:].decode("ascii")


def encode_record(record: Record) -> bytes:
    problems = validate_record(record, integrity=False)
    if problems:
        raise InvalidRecord(problems)
    return _assemble(record)[0]


# -- decoding ---------------------------------------------------------------


def _decode_text(raw: bytes) -> str:
    return raw.decode("utf-8", "surrogateescape")


def _read_string(buf: bytes, pos: int, limit: int, label: str) -> tuple[str, int]:
    nul = buf.find(b"\0", pos, limit)
    if nul < 0:
        raise FieldFormatError(label, pos, "string is not NUL terminated")
    return _decode_text(buf[pos:nul]), nul + 1


def _fixed(buf: bytes, pos: int, limit: int, width: int, label: str) -> str:
    if pos + width > limit:
        raise FieldFormatError(label, pos, f"needs {width} chars, record ends first")
    try:
        return buf[pos:pos + width].decode("ascii")
    except UnicodeDecodeError:
        raise FieldFormatError(label, pos, "non-ASCII bytes in fixed-width field") from None


def decode_value(kind: Kind, spec, buf: bytes, pos: int, limit: int):
    """Decode one field's data starting at ``pos``; returns (value, next_pos)."""
    label = spec.label
    if kind is Kind.DATE:
        text = _fixed(buf, pos, limit, 10, label)
        try:
            return EbbDate.parse(text), pos + 10
        except ValueError as exc:
            raise FieldFormatError(label, pos, str(exc)) from None
    if kind is Kind.TIME:
        text = _fixed(buf, pos, limit, 12, label)
        try:
            return EbbTime.parse(text), pos + 12
        except ValueError as exc:
            raise FieldFormatError(label, pos, str(exc)) from None
    if kind is Kind.FIXED:
        text = _fixed(buf, pos, limit, spec.length, label)
        if not pattern_regex(spec.pattern).match(text):
            raise FieldFormatError(label, pos, f"{text!r} does not match {spec.pattern}")
        return FixedNum(text), pos + spec.length
    if kind is Kind.STRING:
        text, pos = _read_string(buf, pos, limit, label)
        return Str(text), pos
    if kind is Kind.WIFI:
        m = _WIFI_RE.match(buf, pos, limit)
        if not m:
            raise FieldFormatError(label, pos, "expected 0:00")
        return Wifi(int(m.group(1)), int(m.group(2))), m.end()
    if kind is Kind.SYSX:
        m = _SYSX_RE.match(buf, pos, limit)
        if not m:
            raise FieldFormatError(label, pos, "expected 00:string")
        text, end = _read_string(buf, m.end(), limit, label)
        return SysX(int(m.group(1)), text), end
    if kind is Kind.DECISION:
        m = _DEC_RE.match(buf, pos, limit)
        if not m:
            raise FieldFormatError(label, pos, "expected 0000:string")
        text, end = _read_string(buf, m.end(), limit, label)
        return Decision(int(m.group(1)), text), end
    if kind is Kind.BLOB:
        m = _BLOB_RE.match(buf, pos, limit)
        if not m:
            raise FieldFormatError(label, pos, "expected 00:00000000:hex")
        start = m.end()
        end = start + 2 * int(m.group(2))
        if end > limit:
            raise FieldFormatError(label, start, "blob hex runs past the end of the record")
        try:
            payload = binascii.unhexlify(buf[start:end])
        except binascii.Error as exc:
            raise FieldFormatError(label, start, f"bad hex: {exc}") from None
        return Blob(int(m.group(1)), payload), end
    raise FieldFormatError(label, pos, f"kind {kind.value} cannot appear in the field list")


def parse_record(buf: bytes, offset: int = 0) -> tuple[Record, int]:
    """Decode the record starting at ``offset``.

    Returns the record and the number of bytes it occupies (its ``recS``
    char count). The checksum is verified before the field list is decoded,
    so any damage inside the checksummed span surfaces as
    :class:`ChecksumMismatch` once the record can be framed.
    """
    buf = bytes(buf) if not isinstance(buf, bytes) else buf
    size = len(buf)
    if offset < 0 or offset >= size:
        raise TruncatedRecord("offset outside buffer", offset)
    tag = buf[offset:offset + 2]
    if len(tag) < 2:
        raise TruncatedRecord("buffer ends inside the record tag", offset)
    if tag not in TAGS:
        raise BadTag(f"bad record tag {tag!r}", offset)
    if size - offset < HEAD_LEN:
        raise TruncatedRecord("buffer ends inside recS", offset)
    m = _HEAD_RE.match(buf, offset)
    if not m:
        raise FieldFormatError("recS", offset + 3, "expected 'recS 000:00000000'")
    field_count, char_count = int(m.group(2)), int(m.group(3))
    if char_count < MIN_RECORD:
        raise CountMismatch(f"recS char count {char_count} is below the minimum {MIN_RECORD}", offset)
    end = offset + char_count
    if end > size:
        raise TruncatedRecord(f"record needs {char_count} bytes, {size - offset} available", offset)
    if buf[end - CHKS_LEN - len(TRAILER):end - CHKS_LEN] != TRAILER:
        raise CountMismatch("no chkS field where the recS char count says the record ends", offset)
    stored = buf[end - CHKS_LEN:end]
    if not _HEX_UPPER.match(stored):
        raise FieldFormatError("chkS", end - CHKS_LEN, "checksum is not 8 uppercase hex digits")
    computed = fnv.checksum_text(buf[offset:end - CHKS_LEN])
    stored_text = stored.decode("ascii")
    if computed != stored_text:
        raise ChecksumMismatch(computed, stored_text, offset)

    rt = RecordType(tag.decode("ascii"))
    body_end = end - CHKS_LEN - len(TRAILER)
    pos = offset + HEAD_LEN
    date = time = None
    fields: list[Field] = []
    while pos < body_end:
        if buf[pos] != 0x20 or pos + 6 > body_end or buf[pos + 5] != 0x20:
            raise FieldFormatError("?", pos, "expected ' LABEL '")
        try:
            label = buf[pos + 1:pos + 5].decode("ascii")
            spec = catalog_lookup(rt, label)
        except (UnicodeDecodeError, UnknownLabel):
            raise FieldFormatError(repr(buf[pos + 1:pos + 5]), pos + 1,
                                   f"unknown label for {rt.value}") from None
        if label in ("recS", "chkS"):
            raise FieldFormatError(label, pos + 1, "misplaced housekeeping field")
        expected = "ebbD" if date is None else "ebbT" if time is None else None
        if label != expected and (expected is not None or label in ("ebbD", "ebbT")):
            raise FieldFormatError(label, pos + 1, "ebbD and ebbT must directly follow recS")
        value, pos = decode_value(spec.kind, spec, buf, pos + 6, body_end)
        if label == "ebbD":
            date = value
        elif label == "ebbT":
            time = value
        else:
            fields.append(Field(label, value))
    if pos != body_end or date is None or time is None:
        raise FieldFormatError("chkS", pos, "field data overlaps the checksum field")
    if len(fields) + 4 != field_count:
        raise CountMismatch(
            f"recS declares {field_count} fields but the record holds {len(fields) + 4}", offset)
    record = Record(rt, date, time, RecSize(field_count, char_count), tuple(fields), stored_text)
    return record, char_count


def parse_stream(buf: bytes) -> list[tuple[int, Record]]:
    """Strictly decode back-to-back records, skipping newlines between them."""
    out = []
    pos = 0
    while pos < len(buf):
        if buf[pos] == 0x0A:
            pos += 1
            continue
        record, used = parse_record(buf, pos)
        out.append((pos, record))
        pos += used
    return out


# -- forensic scan ----------------------------------------------------------


@dataclass(frozen=True)
class CorruptRegion:
    start: int
    length: int
    reason: str = ""


def _next_candidate(buf: bytes, pos: int) -> int | None:
    m = _HEAD_RE.search(buf, pos)
    return m.start() if m else None


def scan_stream(buf: bytes, padding: bytes = b"\n") -> list[tuple[int, Record | CorruptRegion]]:
    """Recover every intact record from a possibly damaged buffer.

    Bytes that cannot be decoded are reported as :class:`CorruptRegion`
    spans. Bytes in ``padding`` between records are skipped silently (pass
    ``b"\\x00\\n"`` for zero-filled media images); padding at the tail of a
    damaged span is not counted as part of the span.
    """
    buf = bytes(buf)
    out: list[tuple[int, Record | CorruptRegion]] = []
    size = len(buf)
    pos = 0
    gap_start: int | None = None
    gap_reason = ""

    def close_gap(upto: int) -> None:
        nonlocal gap_start
        end = upto
        while end > gap_start and buf[end - 1] in padding:
            end -= 1
        out.append((gap_start, CorruptRegion(gap_start, end - gap_start, gap_reason)))
        gap_start = None

    while pos < size:
        if gap_start is None and buf[pos] in padding:
            pos += 1
            continue
        try:
            record, used = parse_record(buf, pos)
        except DecodeError as exc:
            if gap_start is None:
                gap_start, gap_reason = pos, str(exc)
            nxt = _next_candidate(buf, pos + 1)
            pos = size if nxt is None else nxt
            continue
        if gap_start is not None:
            close_gap(pos)
        out.append((pos, record))
        pos += used
    if gap_start is not None:
        close_gap(size)
    return out

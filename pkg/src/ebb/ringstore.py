"""Single-file EBB media with a fixed ring of RD slots.

File layout (offsets in bytes, ``H`` = header size, ``S`` = slot size)::

    0        preamble: b"EBB0" + 3 x 19-digit decimals (H, S, n), space separated, "\\n"
    64       MD record, zero padded up to H/2
    H/2      DD record (primary copy), zero padded
    3H/4     DD record (shadow copy), zero padded up to H
    H + i*S  RD slot i (i = 0..n-1), record bytes then zero fill

The preamble and the shadow DD copy are extensions of this implementation;
the MD, primary DD and RD slots follow the standard's record encoding.
Record ``n + 1`` overwrites slot 0 and so on, so the media always holds the
latest ``n`` robot data records.

Each append writes the slot first, then the shadow DD, then the primary DD.
An interrupted append therefore leaves at most one damaged slot (the one
being written) or a DD that lags the slots by one record; both are detected
by :meth:`EbbStore.verify` and resolved by readers.
"""

from __future__ import annotations

import datetime as _dt
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

from .codec import encode_record, parse_record
from .errors import (
    DecodeError,
    Exists,
    GeometryInvalid,
    InvalidRecord,
    MdTooLarge,
    NotAnRd,
    RecordTooLarge,
    StoreError,
    StoreFormatError,
)
from .model import (
    SENTINEL_DATE,
    SENTINEL_TIME,
    EbbDate,
    EbbTime,
    Record,
    RecordType,
    Str,
    Violation,
    build_record,
    from_datetime,
)

log = logging.getLogger(__name__)

MAGIC = b"EBB0"
PREAMBLE_SIZE = 64
MAX_CAPACITY = 9_999_999_999
MAX_OFFSET = 10**16 - 1

Stamp = tuple[EbbDate, EbbTime]


@dataclass(frozen=True)
class MediaGeometry:
    slot_size: int = 4096
    capacity: int = 400
    header_size: int = 4096

    def check(self) -> None:
        s, n, h = self.slot_size, self.capacity, self.header_size
        if s < 512 or s & (s - 1):
            raise GeometryInvalid(f"slot size {s} must be a power of two >= 512")
        if not 1 <= n <= MAX_CAPACITY:
            raise GeometryInvalid(f"capacity {n} must be in 1..{MAX_CAPACITY}")
        if h < 1024 or h % 512:
            raise GeometryInvalid(f"header size {h} must be a multiple of 512 and >= 1024")
        if self.file_size - 1 > MAX_OFFSET:
            raise GeometryInvalid("media too large for the 16-digit ebbX offset")

    @property
    def file_size(self) -> int:
        return self.header_size + self.slot_size * self.capacity

    @property
    def md_capacity(self) -> int:
        return self.header_size // 2 - PREAMBLE_SIZE

    @property
    def dd_offset(self) -> int:
        return self.header_size // 2

    @property
    def dd_shadow_offset(self) -> int:
        return self.header_size // 2 + self.header_size // 4

    @property
    def dd_capacity(self) -> int:
        return self.header_size // 4

    def slot_offset(self, index: int) -> int:
        return self.header_size + index * self.slot_size

    def preamble(self) -> bytes:
        text = f"{self.header_size:019d} {self.slot_size:019d} {self.capacity:019d}\n"
        return MAGIC + text.encode("ascii")

    @classmethod
    def from_preamble(cls, raw: bytes) -> MediaGeometry:
        if len(raw) != PREAMBLE_SIZE or raw[:4] != MAGIC or raw[-1:] != b"\n":
            raise StoreFormatError("missing EBB0 preamble")
        try:
            h, s, n = (int(part) for part in raw[4:-1].split(b" "))
        except ValueError:
            raise StoreFormatError("malformed EBB0 preamble") from None
        return cls(slot_size=s, capacity=n, header_size=h)


@dataclass(frozen=True)
class DdState:
    total_records: int
    next_offset: int
    oldest: Stamp | None = None
    newest: Stamp | None = None

    @classmethod
    def from_record(cls, dd: Record) -> DdState:
        def stamp(dl, tl):
            d, t = dd.first(dl), dd.first(tl)
            if d is None or t is None or d.is_sentinel:
                return None
            return (d, t)

        return cls(
            total_records=int(dd.first("ebbN").text),
            next_offset=int(dd.first("ebbX").text),
            oldest=stamp("ebD1", "ebT1"),
            newest=stamp("ebDM", "ebTM"),
        )

    def fields(self) -> list[tuple[str, object]]:
        oldest = self.oldest or (SENTINEL_DATE, SENTINEL_TIME)
        newest = self.newest or (SENTINEL_DATE, SENTINEL_TIME)
        return [
            ("ebbN", f"{self.total_records:010d}"),
            ("ebbX", f"{self.next_offset:016d}"),
            ("ebD1", oldest[0]),
            ("ebT1", oldest[1]),
            ("ebDM", newest[0]),
            ("ebTM", newest[1]),
        ]


@dataclass(frozen=True)
class CorruptSlot:
    slot: int
    offset: int
    reason: str


@dataclass(frozen=True)
class Finding:
    kind: str
    detail: str
    slot: int | None = None

    def __str__(self) -> str:
        where = f" slot {self.slot}" if self.slot is not None else ""
        return f"{self.kind}{where}: {self.detail}"


@dataclass
class StoreReport:
    findings: list[Finding] = field(default_factory=list)
    records: int = 0
    capacity: int = 0

    @property
    def clean(self) -> bool:
        return not self.findings

    def kinds(self) -> list[str]:
        return [f.kind for f in self.findings]


@dataclass
class _Slot:
    state: str  # "empty" | "valid" | "corrupt"
    record: Record | None = None
    reason: str = ""

    @property
    def valid(self) -> bool:
        return self.state == "valid"

    @property
    def stamp(self) -> Stamp | None:
        return self.record.timestamp if self.record is not None else None


@dataclass
class _Layout:
    count: int
    cursor: int
    consistent: bool
    stale: bool = False


def _now() -> _dt.datetime:
    return _dt.datetime.now()


class EbbStore:
    """An open EBB media file.

    One process may hold the store writable; appends are serialized by an
    internal lock. Any number of read-only handles may read concurrently.
    """

    def __init__(self, path: Path, fd: int, geometry: MediaGeometry, *, writable: bool,
                 clock: Callable[[], _dt.datetime] | None, sync: bool):
        self.path = path
        self.geometry = geometry
        self.writable = writable
        self.sync = sync
        self.warnings: list[Violation] = []
        self._fd = fd
        self._clock = clock or _now
        self._lock = threading.Lock()
        self._state = DdState(0, geometry.header_size)
        self.md: Record | None = None

    # -- lifecycle ----------------------------------------------------------

    @classmethod
    def init(cls, path, geometry: MediaGeometry, md: Record, *, overwrite: bool = False,
             clock: Callable[[], _dt.datetime] | None = None, sync: bool = False) -> EbbStore:
        path = Path(path)
        geometry.check()
        if md.record_type != RecordType.MD:
            raise InvalidRecord([Violation("BadRecordType", None, "store header needs an MD record",
                                           str(md.record_type))])
        md_bytes = encode_record(md)
        if len(md_bytes) > geometry.md_capacity:
            raise MdTooLarge(f"MD record is {len(md_bytes)} bytes, header holds {geometry.md_capacity}")
        flags = os.O_RDWR | os.O_CREAT | (os.O_TRUNC if overwrite else os.O_EXCL)
        try:
            fd = os.open(path, flags, 0o644)
        except FileExistsError:
            raise Exists(f"{path} already exists") from None
        store = cls(path, fd, geometry, writable=True, clock=clock, sync=sync)
        try:
            os.ftruncate(fd, geometry.file_size)
            store._pwrite(0, geometry.preamble())
            store._pwrite(PREAMBLE_SIZE, md_bytes)
            store.md = md
            store._write_dd(DdState(0, geometry.header_size))
            store._fsync()
        except BaseException:
            store.close()
            raise
        return store

    @classmethod
    def open(cls, path, *, writable: bool = False, clock: Callable[[], _dt.datetime] | None = None,
             sync: bool = False, recover: bool = True) -> EbbStore:
        path = Path(path)
        fd = os.open(path, os.O_RDWR if writable else os.O_RDONLY)
        try:
            geometry = MediaGeometry.from_preamble(os.pread(fd, PREAMBLE_SIZE, 0))
            geometry.check()
            if os.fstat(fd).st_size != geometry.file_size:
                raise StoreFormatError(
                    f"file is {os.fstat(fd).st_size} bytes, preamble implies {geometry.file_size}")
        except (GeometryInvalid, StoreFormatError):
            os.close(fd)
            raise
        store = cls(path, fd, geometry, writable=writable, clock=clock, sync=sync)
        try:
            store.md = store._read_md()
        except DecodeError:
            store.md = None
        if writable:
            store._load_state(recover)
        return store

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1

    def __enter__(self) -> EbbStore:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- raw I/O ------------------------------------------------------------

    def _pwrite(self, offset: int, data: bytes) -> None:
        view = memoryview(data)
        while view:
            written = os.pwrite(self._fd, view, offset)
            view = view[written:]
            offset += written

    def _pread(self, offset: int, size: int) -> bytes:
        return os.pread(self._fd, size, offset)

    def _fsync(self) -> None:
        if self.sync:
            os.fdatasync(self._fd)

    def _read_md(self) -> Record:
        raw = self._pread(PREAMBLE_SIZE, self.geometry.md_capacity)
        record, _ = parse_record(raw, 0)
        if record.record_type != RecordType.MD:
            raise DecodeError("header record is not MD", PREAMBLE_SIZE)
        return record

    def _read_dd_copy(self, offset: int) -> Record:
        raw = self._pread(offset, self.geometry.dd_capacity)
        record, _ = parse_record(raw, 0)
        if record.record_type != RecordType.DD:
            raise DecodeError("DD region holds a non-DD record", offset)
        return record

    def _read_dd(self) -> tuple[Record | None, str | None, bool]:
        """Return (dd, note, copies_differ); ``dd`` is None when both copies are unreadable."""
        g = self.geometry
        try:
            primary = self._read_dd_copy(g.dd_offset)
        except DecodeError as exc:
            primary, perr = None, str(exc)
        try:
            shadow = self._read_dd_copy(g.dd_shadow_offset)
        except DecodeError as exc:
            shadow, serr = None, str(exc)
        if primary is None and shadow is None:
            return None, f"both DD copies unreadable ({perr}; {serr})", True
        if primary is None:
            return shadow, f"primary DD copy unreadable ({perr}); shadow copy used", True
        if shadow is None:
            return primary, f"shadow DD copy unreadable ({serr})", True
        if shadow != primary:
            return primary, "DD copies differ", True
        return primary, None, False

    def _read_slot(self, index: int) -> _Slot:
        raw = self._pread(self.geometry.slot_offset(index), self.geometry.slot_size)
        if not raw.strip(b"\0"):
            return _Slot("empty")
        try:
            record, _ = parse_record(raw, 0)
        except DecodeError as exc:
            return _Slot("corrupt", reason=str(exc))
        if record.record_type != RecordType.RD:
            return _Slot("corrupt", reason=f"slot holds a {record.record_type} record")
        return _Slot("valid", record)

    # -- state resolution ---------------------------------------------------

    def _layout(self, state: DdState, slot: Callable[[int], _Slot]) -> _Layout:
        """Work out which slots hold data and where the ring starts.

        The DD is trusted when self-consistent, except that a complete record
        sitting at the DD's next-write position means the DD missed the last
        append. When the DD contradicts itself the layout is rebuilt from
        slot occupancy.
        """
        g = self.geometry
        n = g.capacity
        k = state.total_records
        cursor, rem = divmod(state.next_offset - g.header_size, g.slot_size)
        offset_ok = state.next_offset >= g.header_size and rem == 0 and 0 <= cursor < n
        if offset_ok and k <= n and (k == n or cursor == k):
            at = slot(cursor)
            if at.valid and (k < n or at.stamp != state.oldest):
                return _Layout(min(k + 1, n), (cursor + 1) % n, True, stale=True)
            return _Layout(k, cursor, True)
        occupied = sum(1 for i in range(n) if slot(i).state != "empty")
        if occupied == n:
            if not offset_ok:
                cursor = self._oldest_slot(slot)
            return _Layout(n, cursor, False)
        return _Layout(occupied, occupied % n, False)

    def _oldest_slot(self, slot: Callable[[int], _Slot]) -> int:
        """Where a full ring starts when no DD says so: the slot with the earliest timestamp."""
        n = self.geometry.capacity
        stamps = [(slot(i).stamp, i) for i in range(n) if slot(i).valid]
        if not stamps:
            return 0
        return min(stamps)[1]

    @staticmethod
    def _order(layout: _Layout, n: int) -> list[int]:
        if layout.count < n:
            return list(range(layout.count))
        return [(layout.cursor + i) % n for i in range(n)]

    def _recompute(self, layout: _Layout, slot: Callable[[int], _Slot]) -> DdState:
        order = self._order(layout, self.geometry.capacity)
        stamps = [slot(i).stamp for i in order if slot(i).valid]
        return DdState(
            total_records=layout.count,
            next_offset=self.geometry.slot_offset(layout.cursor),
            oldest=stamps[0] if stamps else None,
            newest=stamps[-1] if stamps else None,
        )

    def _slot_cache(self) -> Callable[[int], _Slot]:
        cache: dict[int, _Slot] = {}

        def get(i: int) -> _Slot:
            if i not in cache:
                cache[i] = self._read_slot(i)
            return cache[i]

        return get

    def _load_state(self, recover: bool) -> None:
        dd, note, _ = self._read_dd()
        slot = self._slot_cache()
        if dd is None:
            state = DdState(0, self.geometry.header_size)
            layout = self._layout(DdState(0, -1), slot)  # invalid offset forces a slot scan
        else:
            state = DdState.from_record(dd)
            layout = self._layout(state, slot)
        if dd is None or note or layout.stale or not layout.consistent:
            state = self._recompute(layout, slot)
            if recover:
                log.warning("%s: rebuilding DD from slots (%s)", self.path,
                            note or ("stale DD" if layout.stale else "inconsistent DD"))
                self._write_dd(state)
        self._state = state

    # -- DD -----------------------------------------------------------------

    @property
    def state(self) -> DdState:
        return self._state

    def _dd_record(self, state: DdState) -> Record:
        date, time = from_datetime(self._clock())
        return build_record(RecordType.DD, date, time, state.fields())

    def _write_dd(self, state: DdState) -> None:
        data = encode_record(self._dd_record(state))
        g = self.geometry
        if len(data) > g.dd_capacity:
            raise StoreError(f"DD record of {len(data)} bytes does not fit {g.dd_capacity}")
        block = data.ljust(g.dd_capacity, b"\0")
        self._pwrite(g.dd_shadow_offset, block)
        self._fsync()
        self._pwrite(g.dd_offset, block)
        self._fsync()
        self._state = state

    def read_dd(self) -> Record | None:
        return self._read_dd()[0]

    # -- writing ------------------------------------------------------------

    def append_rd(self, rd: Record) -> int:
        """Encode ``rd`` into the next slot; returns the slot index written."""
        if rd.record_type != RecordType.RD:
            raise NotAnRd(f"only RD records go into slots, got {rd.record_type}")
        return self.append_encoded(encode_record(rd), rd)

    def append_encoded(self, data: bytes, record: Record | None = None) -> int:
        """Store one already-encoded RD record verbatim.

        Used by the ingest daemon so the media holds exactly the bytes the
        robot sent. The record is decoded (and its checksum verified) unless
        the caller passes the decoded form.
        """
        if not self.writable:
            raise StoreError("store is open read-only")
        if record is None:
            record, used = parse_record(data, 0)
            if used != len(data):
                raise DecodeError(f"{len(data) - used} trailing bytes after the record", used)
        if record.record_type != RecordType.RD:
            raise NotAnRd(f"only RD records go into slots, got {record.record_type}")
        g = self.geometry
        if len(data) > g.slot_size:
            raise RecordTooLarge(f"record of {len(data)} bytes exceeds the {g.slot_size}-byte slot")
        with self._lock:
            state = self._state
            n = g.capacity
            index = (state.next_offset - g.header_size) // g.slot_size
            stamp = record.timestamp
            if state.newest is not None and stamp < state.newest:
                v = Violation("ClockRegression", "ebbT", "record is older than the newest stored",
                              f"{stamp[0]} {stamp[1]}")
                self.warnings.append(v)
                log.warning("%s: %s", self.path, v)

            self._pwrite(g.slot_offset(index), data + bytes(g.slot_size - len(data)))
            self._fsync()

            was_full = state.total_records == n
            count = min(state.total_records + 1, n)
            cursor = (index + 1) % n
            if count == 1:
                oldest = stamp
            elif was_full:
                oldest = self._first_stamp_from(cursor, stamp)
            else:
                oldest = state.oldest
            self._write_dd(DdState(count, g.slot_offset(cursor), oldest, stamp))
            return index

    def _first_stamp_from(self, start: int, fallback: Stamp) -> Stamp:
        n = self.geometry.capacity
        for step in range(n):
            slot = self._read_slot((start + step) % n)
            if slot.valid:
                return slot.stamp
        return fallback

    # -- reading ------------------------------------------------------------

    def read_chronological(self) -> Iterator[Record | CorruptSlot]:
        """Yield stored RD records oldest first.

        Slots that cannot be decoded are yielded as :class:`CorruptSlot`.
        """
        g = self.geometry
        slot = self._slot_cache()
        dd, _, _ = self._read_dd()
        if dd is None:
            # No bookkeeping left: fall back to timestamp order of what survives.
            present = [(i, slot(i)) for i in range(g.capacity) if slot(i).state != "empty"]
            present.sort(key=lambda item: (item[1].stamp is None, item[1].stamp or (), item[0]))
            order = [i for i, _ in present]
        else:
            order = self._order(self._layout(DdState.from_record(dd), slot), g.capacity)
        for i in order:
            s = slot(i)
            if s.valid:
                yield s.record
            else:
                yield CorruptSlot(i, g.slot_offset(i), s.reason or "empty slot inside the ring")

    def records(self) -> list[Record]:
        return [r for r in self.read_chronological() if isinstance(r, Record)]

    def rd_region(self) -> bytes:
        g = self.geometry
        return self._pread(g.header_size, g.slot_size * g.capacity)

    # -- audit --------------------------------------------------------------

    def verify(self) -> StoreReport:
        g = self.geometry
        n = g.capacity
        report = StoreReport(capacity=n)
        add = report.findings.append

        try:
            self._read_md()
        except DecodeError as exc:
            add(Finding("CorruptMD", str(exc)))

        statuses = [self._read_slot(i) for i in range(n)]
        slot = statuses.__getitem__
        dd, note, _ = self._read_dd()
        if dd is None:
            add(Finding("CorruptDD", note))
            for i, s in enumerate(statuses):
                if s.state == "corrupt":
                    add(Finding("CorruptSlot", s.reason, i))
            report.records = sum(s.valid for s in statuses)
            return report

        state = DdState.from_record(dd)
        layout = self._layout(state, slot)
        if layout.stale:
            detail = "DD lags the slots by one append"
            add(Finding("StaleDD", f"{detail}; {note}" if note else detail))
        elif note and note.startswith("primary"):
            add(Finding("StaleDD", f"interrupted DD update: {note}"))
        elif note:
            add(Finding("DdCopiesDiffer", note))

        if not layout.consistent:
            if layout.count != state.total_records:
                add(Finding("CountInconsistent",
                            f"ebbN says {state.total_records}, {layout.count} slots hold data"))
            expected = g.slot_offset(layout.cursor)
            if state.next_offset != expected:
                add(Finding("OffsetInconsistent", f"ebbX is {state.next_offset}, slots imply {expected}"))

        # A damaged slot at the next-write position is an append that crashed
        # before its DD update: the DD is stale with respect to that slot.
        inflight = None
        if layout.consistent and not layout.stale and statuses[layout.cursor].state == "corrupt":
            inflight = layout.cursor
            add(Finding("StaleDD", "append interrupted before the DD update; torn write: "
                        f"{statuses[inflight].reason}", inflight))

        order = self._order(layout, n)
        in_ring = set(order)
        if layout.consistent:
            occupied = sum(1 for s in statuses if s.state != "empty")
            if inflight is not None and inflight not in in_ring:
                occupied -= 1
            if occupied != layout.count:
                add(Finding("CountInconsistent", f"ebbN says {layout.count}, {occupied} slots hold data"))
            else:
                for i, s in enumerate(statuses):
                    if i not in in_ring and i != inflight and s.state != "empty":
                        add(Finding("UnexpectedSlotData", "data outside the ring's occupied range", i))

        for i in order:
            if not statuses[i].valid and i != inflight:
                add(Finding("CorruptSlot", statuses[i].reason or "empty slot inside the ring", i))

        if not layout.stale:
            first = statuses[order[0]] if order else None
            last = statuses[order[-1]] if order else None
            if not order:
                if state.oldest is not None or state.newest is not None:
                    add(Finding("OldestInconsistent", "empty ring but DD carries timestamps"))
            else:
                if first.valid and first.stamp != state.oldest:
                    add(Finding("OldestInconsistent",
                                f"DD oldest {_fmt(state.oldest)}, slot holds {_fmt(first.stamp)}",
                                order[0]))
                if last.valid and last.stamp != state.newest:
                    add(Finding("NewestInconsistent",
                                f"DD newest {_fmt(state.newest)}, slot holds {_fmt(last.stamp)}",
                                order[-1]))

        previous = None
        for i in order:
            s = statuses[i]
            if not s.valid:
                continue
            if previous is not None and s.stamp < previous:
                add(Finding("TimestampRegression",
                            f"{_fmt(s.stamp)} is earlier than the preceding {_fmt(previous)}", i))
            previous = s.stamp
        report.records = sum(1 for i in order if statuses[i].valid)
        return report

    def info(self) -> dict:
        dd = self.read_dd()
        state = DdState.from_record(dd) if dd is not None else None
        md = {}
        if self.md is not None:
            md = {f.label: f.value.text for f in self.md.fields if isinstance(f.value, Str)}
        g = self.geometry
        return {
            "path": str(self.path),
            "header_size": g.header_size,
            "slot_size": g.slot_size,
            "capacity": g.capacity,
            "md": md,
            "total_records": state.total_records if state else None,
            "next_offset": state.next_offset if state else None,
            "oldest": _fmt(state.oldest) if state else None,
            "newest": _fmt(state.newest) if state else None,
        }


def _fmt(stamp: Stamp | None) -> str:
    if stamp is None:
        return "none"
    return f"{stamp[0]} {stamp[1]}"


# -- functional surface -----------------------------------------------------


def store_init(path, geometry: MediaGeometry, md: Record, **kw) -> EbbStore:
    return EbbStore.init(path, geometry, md, **kw)


def store_open(path, **kw) -> EbbStore:
    return EbbStore.open(path, **kw)


def append_rd(store: EbbStore, rd: Record) -> int:
    return store.append_rd(rd)


def read_chronological(store: EbbStore) -> Iterator[Record | CorruptSlot]:
    return store.read_chronological()


def verify_store(store: EbbStore) -> StoreReport:
    return store.verify()


def make_md(date, time, *, name: str, manufacturer: str, responsible: str, ebb_name: str,
            version: str | None = None, serial: str | None = None,
            operator: str | None = None) -> Record:
    """Build an MD record from keyword arguments; ``None`` leaves an optional field out."""
    pairs = [("botN", name), ("botV", version), ("botS", serial), ("botM", manufacturer),
             ("opeR", operator), ("resP", responsible), ("ebbN", ebb_name)]
    return build_record(RecordType.MD, date, time, [(k, v) for k, v in pairs if v is not None])


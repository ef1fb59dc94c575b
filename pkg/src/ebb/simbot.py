"""Deterministic simulated robot producing EBB robot data records.

The robot is a differential-drive base with two wheel encoders and eight IR
proximity sensors. A schedule script says when each kind of record is
emitted. Script lines::

    # comment
    start 2022:04:20 08:40:20:000     EBB clock at offset 0 (default 2022:04:20 00:00:00:000)
    skew -1500                        robot clock (botT) minus EBB clock, in ms
    2000 motor_sensor [every MS|once] wheel angles, battery, IR sensors (default every 2000)
    5000 camera_frame [every MS|once] frame grab from camera 01 (default every 10000)
    7100 text_command TEXT            user command; "Halt"/"Run" stop and restart the wheels
    7900 text_reply TEXT              robot's spoken or displayed answer
    8000 audio_clip                   clip from microphone 01
    12000 obstacle DURATION_MS        object on the right: IR 6/7 rise, robot veers left
                                      and motor records carry decC 0020 "obstacle detected"

Offsets are milliseconds after ``start`` and must be positive. Records are
emitted for offsets up to and including the run duration; simultaneous
records are ordered camera, motor/sensor, then the rest in script order.
"""

from __future__ import annotations

import datetime as _dt
import random
import time as _time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable

from .codec import encode_record
from .errors import RejectedRecord, ScriptInvalid
from .model import EbbDate, EbbTime, Record, RecordType, build_record, from_datetime, to_datetime

MOTOR_PERIOD_MS = 2000
CAMERA_PERIOD_MS = 10000

OBSTACLE_CODE = 20
OBSTACLE_REASON = "obstacle detected"

_PERIODIC = {"motor_sensor": MOTOR_PERIOD_MS, "camera_frame": CAMERA_PERIOD_MS}
_ONE_SHOT = {"text_command", "text_reply", "audio_clip", "obstacle"}
_PRIORITY = {"camera_frame": 0, "motor_sensor": 1}


def fixture(name: str) -> bytes:
    return resources.files("ebb").joinpath("data").joinpath(name).read_bytes()


def camera_frame() -> bytes:
    return fixture("frame64.jpg")


def audio_clip() -> bytes:
    return fixture("chirp.wav")


@dataclass(frozen=True)
class ScheduleEvent:
    offset_ms: int
    kind: str
    period_ms: int | None = None
    text: str = ""
    duration_ms: int = 0


@dataclass
class Script:
    start: _dt.datetime = _dt.datetime(2022, 4, 20)
    skew_ms: int = 0
    events: list[ScheduleEvent] = field(default_factory=list)


def parse_script(text: str) -> Script:
    script = Script()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head, _, rest = line.partition(" ")
        rest = rest.strip()
        if head == "start":
            try:
                d, t = rest.split()
                script.start = to_datetime(EbbDate.parse(d), EbbTime.parse(t))
            except ValueError as exc:
                raise ScriptInvalid(f"bad start {rest!r}: {exc}", lineno) from None
            continue
        if head == "skew":
            try:
                script.skew_ms = int(rest)
            except ValueError:
                raise ScriptInvalid(f"bad skew {rest!r}", lineno) from None
            continue
        try:
            offset = int(head)
        except ValueError:
            raise ScriptInvalid(f"expected an offset in ms or a directive, got {head!r}", lineno) from None
        if offset <= 0:
            raise ScriptInvalid("offsets must be positive", lineno)
        kind, _, args = rest.partition(" ")
        args = args.strip()
        script.events.append(_event(offset, kind, args, lineno))
    return script


def _event(offset: int, kind: str, args: str, lineno: int) -> ScheduleEvent:
    if kind in _PERIODIC:
        words = args.split()
        if not words:
            return ScheduleEvent(offset, kind, _PERIODIC[kind])
        if words == ["once"]:
            return ScheduleEvent(offset, kind, None)
        if len(words) == 2 and words[0] == "every" and words[1].isdigit() and int(words[1]) > 0:
            return ScheduleEvent(offset, kind, int(words[1]))
        raise ScriptInvalid(f"{kind} takes 'every MS' or 'once', got {args!r}", lineno)
    if kind in ("text_command", "text_reply"):
        if not args:
            raise ScriptInvalid(f"{kind} needs text", lineno)
        if "\0" in args:
            raise ScriptInvalid("text may not contain NUL", lineno)
        return ScheduleEvent(offset, kind, text=args)
    if kind == "audio_clip":
        if args:
            raise ScriptInvalid("audio_clip takes no arguments", lineno)
        return ScheduleEvent(offset, kind)
    if kind == "obstacle":
        if not args.isdigit() or int(args) <= 0:
            raise ScriptInvalid("obstacle needs a positive duration in ms", lineno)
        return ScheduleEvent(offset, kind, duration_ms=int(args))
    raise ScriptInvalid(f"unknown event kind {kind!r}", lineno)


def load_script(name_or_path: str | Path) -> Script:
    """Load a bundled script by name (``table9``, ``demo``) or a script file."""
    path = Path(name_or_path)
    if path.exists():
        return parse_script(path.read_text(encoding="utf-8"))
    candidate = resources.files("ebb").joinpath("data").joinpath(f"{name_or_path}.script")
    if candidate.is_file():
        return parse_script(candidate.read_text(encoding="utf-8"))
    raise ScriptInvalid(f"no script file or bundled script named {str(name_or_path)!r}")


class _Robot:
    """Wheel, battery and IR state, advanced in simulated time."""

    def __init__(self, rng: random.Random):
        self.rng = rng
        self.left = 0.0
        self.right = 0.0
        self.halted = False
        self.last_ms = 0
        self.obstacles: list[tuple[int, int]] = []

    def blocked(self, t_ms: int) -> bool:
        return any(a <= t_ms < b for a, b in self.obstacles)

    def advance(self, t_ms: int) -> None:
        dt = (t_ms - self.last_ms) / 1000.0
        self.last_ms = t_ms
        if self.halted or dt <= 0:
            return
        left_speed, right_speed = (40.0, 90.0) if self.blocked(t_ms) else (90.0, 88.0)
        self.left = _wrap(self.left + left_speed * dt + self.rng.uniform(-0.5, 0.5))
        self.right = _wrap(self.right + right_speed * dt + self.rng.uniform(-0.5, 0.5))

    def battery(self, t_ms: int) -> int:
        return max(0, 255 - t_ms // 20000)

    def ir(self, t_ms: int) -> list[int]:
        values = [self.rng.randint(30, 70) for _ in range(8)]
        if self.blocked(t_ms):
            values[5] = 200 + self.rng.randint(0, 60)
            values[6] = 120 + self.rng.randint(0, 60)
        return values


def _wrap(angle: float) -> float:
    angle = (angle + 180.0) % 360.0 - 180.0
    return round(angle, 2)


def _emissions(script: Script, duration_ms: int) -> list[tuple[int, int, int, ScheduleEvent]]:
    out = []
    for seq, ev in enumerate(script.events):
        if ev.kind == "obstacle":
            continue
        priority = _PRIORITY.get(ev.kind, 2)
        t = ev.offset_ms
        while t <= duration_ms:
            out.append((t, priority, seq, ev))
            if ev.period_ms is None:
                break
            t += ev.period_ms
    out.sort(key=lambda item: item[:3])
    return out


def generate(script: Script | str, seed: int = 0, duration: float = 0.0) -> list[Record]:
    """Run the schedule for ``duration`` seconds and return the RD records in time order."""
    if isinstance(script, (str, Path)):
        script = load_script(script)
    if duration < 0:
        raise ScriptInvalid("duration must be >= 0")
    duration_ms = round(duration * 1000)
    rng = random.Random(seed)
    robot = _Robot(rng)
    robot.obstacles = [(ev.offset_ms, ev.offset_ms + ev.duration_ms)
                       for ev in script.events if ev.kind == "obstacle"]
    frame = audio = None
    records = []
    for t_ms, _, _, ev in _emissions(script, duration_ms):
        robot.advance(t_ms)
        moment = script.start + _dt.timedelta(milliseconds=t_ms)
        date, ebb_time = from_datetime(moment)
        bot_time = EbbTime.from_time(moment + _dt.timedelta(milliseconds=script.skew_ms))
        fields: list[tuple[str, object]] = [("botT", bot_time)]
        if ev.kind == "motor_sensor":
            fields += [
                ("actV", f"001:{robot.left:+08.2f}"),
                ("actV", f"002:{robot.right:+08.2f}"),
                ("batL", f"{robot.battery(t_ms):03d}"),
            ]
            fields += [("irSe", f"{i:02d}:{v:03d}") for i, v in enumerate(robot.ir(t_ms), 1)]
            if robot.blocked(t_ms):
                fields.append(("decC", (OBSTACLE_CODE, OBSTACLE_REASON)))
        elif ev.kind == "camera_frame":
            frame = frame or camera_frame()
            fields.append(("camF", (1, frame)))
        elif ev.kind == "audio_clip":
            audio = audio or audio_clip()
            fields.append(("micI", (1, audio)))
        elif ev.kind == "text_command":
            word = ev.text.strip().lower()
            if word == "halt":
                robot.halted = True
            elif word == "run":
                robot.halted = False
            fields.append(("txtC", ev.text))
        elif ev.kind == "text_reply":
            fields.append(("txtR", ev.text))
        records.append(build_record(RecordType.RD, date, ebb_time, fields))
    return records


def record_kind(record: Record) -> str:
    labels = set(record.labels())
    if "camF" in labels:
        return "camera_frame"
    if "actV" in labels:
        return "motor_sensor"
    if "txtC" in labels:
        return "text_command"
    if "txtR" in labels:
        return "text_reply"
    if "micI" in labels:
        return "audio_clip"
    return "other"


# -- replay -----------------------------------------------------------------


@dataclass
class ReplayStats:
    sent: int = 0
    accepted: int = 0
    rejected: int = 0


def replay(records: Iterable[Record], target, speed_factor: float | None = None,
           sleep=_time.sleep) -> ReplayStats:
    """Write ``records`` into a store, or stream them to an ingest daemon.

    ``target`` is an open writable :class:`~ebb.ringstore.EbbStore` or a
    daemon address (``host:port`` or ``unix:/path``). With ``speed_factor``
    the gaps between record timestamps are reproduced, divided by that factor.
    """
    stats = ReplayStats()
    previous: _dt.datetime | None = None

    def pace(record: Record) -> None:
        nonlocal previous
        moment = to_datetime(record.ebb_date, record.ebb_time)
        if speed_factor and previous is not None:
            gap = (moment - previous).total_seconds() / speed_factor
            if gap > 0:
                sleep(gap)
        previous = moment

    if isinstance(target, (str, tuple)):
        from .ingestd import IngestClient

        with IngestClient(target) as client:
            for index, record in enumerate(records):
                pace(record)
                reply = client.send(encode_record(record))
                stats.sent += 1
                if reply != "OK":
                    stats.rejected += 1
                    raise RejectedRecord(reply.removeprefix("ERR "), index)
                stats.accepted += 1
        return stats

    for record in records:
        pace(record)
        target.append_rd(record)
        stats.sent += 1
        stats.accepted += 1
    return stats

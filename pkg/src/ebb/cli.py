"""ebbctl: initialize, feed, inspect and audit EBB stores.

Exit codes are the same for every subcommand: 0 success, 1 findings (bad
slots, verify findings, rejected records), 2 usage error, 3 I/O error.
Human output goes to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__, ingestd, simbot
from .codec import CorruptRegion, encode_record, parse_stream, scan_stream
from .errors import (
    DecodeError,
    EbbError,
    InvalidRecord,
    RejectedRecord,
    ScriptInvalid,
    StoreError,
    TargetUnavailable,
)
from .model import Blob, EbbDate, EbbTime, Record, from_datetime, show_value
from .ringstore import CorruptSlot, EbbStore, MediaGeometry, make_md

log = logging.getLogger("ebbctl")

EXIT_OK, EXIT_FINDINGS, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

# MD flag name -> (catalog label, make_md keyword)
MD_FLAGS = {
    "bot-name": ("botN", "name"),
    "bot-version": ("botV", "version"),
    "bot-serial": ("botS", "serial"),
    "bot-manufacturer": ("botM", "manufacturer"),
    "operator": ("opeR", "operator"),
    "responsible": ("resP", "responsible"),
    "ebb-name": ("ebbN", "ebb_name"),
}
_LABEL_TO_KW = {label: kw for label, kw in MD_FLAGS.values()}
_REQUIRED_MD = ("bot-name", "bot-manufacturer", "responsible", "ebb-name")


class UsageError(Exception):
    pass


# -- shared helpers ---------------------------------------------------------


def parse_moment(text: str) -> tuple[EbbDate | None, EbbTime]:
    """``[yyyy:mm:dd ]hh:mm:ss[:mmm]`` for --from/--to/--at; seconds are required."""
    parts = text.split()
    if len(parts) not in (1, 2):
        raise UsageError(f"bad time {text!r}; use [yyyy:mm:dd ]hh:mm:ss[:mmm]")
    date = None
    try:
        if len(parts) == 2:
            date = EbbDate.parse(parts[0])
            if date.problem():
                raise ValueError(date.problem())
        clock = parts[-1]
        if clock.count(":") == 2:
            clock += ":000"
        time = EbbTime.parse(clock)
        if time.problem():
            raise ValueError(time.problem())
    except ValueError as exc:
        raise UsageError(f"bad time {text!r}: {exc}") from None
    return date, time


def _in_window(record: Record, start, end) -> bool:
    """Bounds are inclusive; a bound without a date compares times of day only."""

    def position(bound) -> int:
        date, time = bound
        mine = record.timestamp if date is not None else record.ebb_time
        other = (date, time) if date is not None else time
        return (mine > other) - (mine < other)

    if start is not None and position(start) < 0:
        return False
    if end is not None and position(end) > 0:
        return False
    return True


def blob_summary(label: str, blob: Blob) -> str:
    digest = hashlib.sha256(blob.payload).hexdigest()[:16]
    return f"<{label} {blob.device:02d} {blob.byte_len} sha256:{digest}>"


def _field_text(label: str, value, raw: bool) -> str:
    if isinstance(value, Blob):
        if raw:
            return f"{label} {value.device:02d}:{value.byte_len:08d}:{value.payload.hex().upper()}"
        return blob_summary(label, value)
    return f"{label} {show_value(value)}"


def _field_json(value, raw: bool):
    if isinstance(value, Blob):
        out = {"device": value.device, "len": value.byte_len,
               "sha256": hashlib.sha256(value.payload).hexdigest()}
        if raw:
            out["hex"] = value.payload.hex().upper()
        return out
    return show_value(value)


def record_line(record: Record, *, labels=None, raw: bool = False) -> str:
    """One record in the tables' ``label value`` style, on one line."""
    parts = [str(record.record_type.value), f"recS {record.rec_size}",
             f"ebbD {record.ebb_date}", f"ebbT {record.ebb_time}"]
    parts += [_field_text(f.label, f.value, raw) for f in record.fields
              if labels is None or f.label in labels]
    parts.append(f"chkS {record.checksum}")
    return " ".join(parts)


def record_json(record: Record, *, labels=None, raw: bool = False, slot: int | None = None) -> str:
    obj = {
        "type": record.record_type.value,
        "recS": str(record.rec_size),
        "ebbD": str(record.ebb_date),
        "ebbT": str(record.ebb_time),
        "fields": [[f.label, _field_json(f.value, raw)] for f in record.fields
                   if labels is None or f.label in labels],
        "chkS": record.checksum,
    }
    if slot is not None:
        obj["slot"] = slot
    return json.dumps(obj, ensure_ascii=False, sort_keys=False)


def _open_store(path: str, *, writable: bool = False) -> EbbStore:
    if not Path(path).exists():
        raise FileNotFoundError(f"no store at {path}")
    return EbbStore.open(path, writable=writable)


def _out(text: str = "") -> None:
    sys.stdout.write(text + "\n")


# -- subcommands ------------------------------------------------------------


def _read_md_file(path: str) -> dict[str, str]:
    """``key: value`` lines; keys are MD labels (botN) or flag names (bot-name)."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, value = line.partition(":")
        key = key.strip()
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key: value")
        if key in MD_FLAGS:
            key = MD_FLAGS[key][1]
        elif key in _LABEL_TO_KW:
            key = _LABEL_TO_KW[key]
        else:
            raise UsageError(f"{path}:{lineno}: unknown MD key {key!r}")
        values[key] = value.strip()
    return values


def cmd_init(args) -> int:
    if args.slots <= 0:
        raise UsageError("--slots must be at least 1")
    md_kw = _read_md_file(args.md_from) if args.md_from else {}
    for flag, (_, kw) in MD_FLAGS.items():
        value = getattr(args, flag.replace("-", "_"))
        if value is not None:
            md_kw[kw] = value
    missing = [f"--{flag}" for flag in _REQUIRED_MD if not md_kw.get(MD_FLAGS[flag][1])]
    if missing:
        raise UsageError(f"MD needs {', '.join(missing)}")
    if args.at:
        date, time = parse_moment(args.at)
        if date is None:
            raise UsageError("--at needs a date and a time")
    else:
        date, time = from_datetime(_dt.datetime.now())
    geometry = MediaGeometry(slot_size=args.slot_size, capacity=args.slots,
                             header_size=args.header_size)
    try:
        md = make_md(date, time, **md_kw)
        with EbbStore.init(args.store, geometry, md, overwrite=args.force, sync=True):
            pass
    except InvalidRecord as exc:
        raise UsageError(f"MD rejected: {exc}") from None
    except (ValueError, StoreError) as exc:
        if isinstance(exc, FileExistsError):
            raise
        raise UsageError(str(exc)) from None
    _out(f"initialized {args.store}: {args.slots} slots of {args.slot_size} bytes, "
         f"{geometry.file_size} bytes total")
    return EXIT_OK


def cmd_info(args) -> int:
    with _open_store(args.store) as store:
        info = store.info()
    if args.format == "json":
        _out(json.dumps(info))
        return EXIT_OK
    _out(f"store        {info['path']}")
    _out(f"geometry     header {info['header_size']}, {info['capacity']} slots of "
         f"{info['slot_size']} bytes")
    for label, value in info["md"].items():
        _out(f"{label:<12} {value}")
    _out(f"records      {info['total_records']}")
    _out(f"next offset  {info['next_offset']}")
    _out(f"oldest       {info['oldest']}")
    _out(f"newest       {info['newest']}")
    return EXIT_OK


def cmd_dump(args) -> int:
    start = parse_moment(args.from_) if args.from_ else None
    end = parse_moment(args.to) if args.to else None
    labels = set(args.fields.split(",")) if args.fields else None
    jsonl = args.format == "jsonlines"
    status = EXIT_OK
    with _open_store(args.store) as store:
        for header in (store.md, store.read_dd()):
            if header is None:
                _out("CORRUPT header record")
                status = EXIT_FINDINGS
                continue
            _out(record_json(header, raw=args.raw) if jsonl else record_line(header, raw=args.raw))
        for item in store.read_chronological():
            if isinstance(item, CorruptSlot):
                status = EXIT_FINDINGS
                if jsonl:
                    _out(json.dumps({"type": "CORRUPT", "slot": item.slot, "offset": item.offset,
                                     "reason": item.reason}))
                else:
                    _out(f"CORRUPT slot {item.slot} offset {item.offset}: {item.reason}")
                continue
            if not _in_window(item, start, end):
                continue
            if jsonl:
                _out(record_json(item, labels=labels, raw=args.raw))
            else:
                _out(record_line(item, labels=labels, raw=args.raw))
    return status


def cmd_verify(args) -> int:
    with _open_store(args.store) as store:
        report = store.verify()
    for finding in report.findings:
        _out(str(finding))
    verdict = "clean" if report.clean else f"{len(report.findings)} finding(s)"
    _out(f"{verdict}: {report.records} readable record(s) of {report.capacity} slots")
    return EXIT_OK if report.clean else EXIT_FINDINGS


def cmd_extract(args) -> int:
    if args.index < 0:
        raise UsageError("--index must be >= 0")
    with _open_store(args.store) as store:
        blobs = [v for r in store.records() for v in r.values(args.label)]
    if not blobs:
        raise UsageError(f"no {args.label} blobs in the store")
    if args.index >= len(blobs):
        raise UsageError(f"--index {args.index} out of range; the store has {len(blobs)} "
                         f"{args.label} blob(s)")
    blob = blobs[args.index]
    Path(args.out).write_bytes(blob.payload)
    _out(f"wrote {blob.byte_len} bytes ({args.label} device {blob.device:02d}) to {args.out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    env = ingestd.env_config()
    listen = args.listen or env.get("listen", ingestd.DEFAULT_LISTEN)
    store_path = args.store or env.get("store")
    if not store_path:
        raise UsageError("--store or EBB_STORE is required")
    idle = args.idle_timeout if args.idle_timeout is not None else env.get(
        "idle_timeout", ingestd.DEFAULT_IDLE_TIMEOUT)
    max_record = args.max_record or env.get("max_record")
    try:
        ingestd.parse_address(listen)
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    def ready(server) -> None:
        print(f"listening on {server.address}", file=sys.stderr, flush=True)

    with _open_store(store_path, writable=True) as store:
        sessions = ingestd.serve(listen, store, idle_timeout=idle, max_record=max_record,
                                 ready=ready)
    for session in sessions:
        print(ingestd.drain(session).summary(), file=sys.stderr)
    return EXIT_OK


def _generated(args) -> list[Record]:
    return simbot.generate(simbot.load_script(args.script), seed=args.seed, duration=args.duration)


def cmd_generate(args) -> int:
    if args.duration < 0:
        raise UsageError("--duration must be >= 0")
    records = _generated(args)
    if args.format == "wire":
        data = b"".join(encode_record(r) + b"\n" for r in records)
        if args.out:
            Path(args.out).write_bytes(data)
        else:
            sys.stdout.buffer.write(data)
            sys.stdout.flush()
        return EXIT_OK
    for record in records:
        _out(record_json(record) if args.format == "jsonlines" else record_line(record))
    return EXIT_OK


def cmd_replay(args) -> int:
    if args.input:
        try:
            records = [r for _, r in parse_stream(Path(args.input).read_bytes())]
        except DecodeError as exc:
            raise UsageError(f"{args.input}: {exc}") from None
    else:
        if args.duration < 0:
            raise UsageError("--duration must be >= 0")
        records = _generated(args)
    if bool(args.store) == bool(args.to):
        raise UsageError("give exactly one of --store or --to")
    if args.store:
        with _open_store(args.store, writable=True) as store:
            stats = simbot.replay(records, store, args.speed_factor)
    else:
        stats = simbot.replay(records, args.to, args.speed_factor)
    _out(f"sent {stats.sent}, accepted {stats.accepted}, rejected {stats.rejected}")
    return EXIT_OK


def cmd_scan(args) -> int:
    data = Path(args.file).read_bytes()
    gaps = 0
    for offset, item in scan_stream(data):
        if isinstance(item, CorruptRegion):
            gaps += 1
            _out(f"GAP offset {item.start} length {item.length}: {item.reason}")
        elif args.format == "jsonlines":
            _out(record_json(item))
        else:
            _out(f"@{offset} {record_line(item)}")
    return EXIT_FINDINGS if gaps else EXIT_OK


# -- argument parsing -------------------------------------------------------


def _script_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--script", default="table9",
                   help="bundled script name (table9, demo) or script file (default: table9)")
    p.add_argument("--duration", type=float, default=25.0, help="seconds to simulate (default: 25)")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ebbctl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("init", help="create a new store file")
    p.add_argument("--store", required=True)
    p.add_argument("--slots", type=int, required=True, help="capacity n in RD records")
    p.add_argument("--slot-size", type=int, default=4096)
    p.add_argument("--header-size", type=int, default=4096)
    p.add_argument("--md-from", metavar="FILE", help="key: value file with MD fields")
    for flag, (label, _) in MD_FLAGS.items():
        p.add_argument(f"--{flag}", help=f"MD {label}")
    p.add_argument("--at", help="MD timestamp 'yyyy:mm:dd hh:mm:ss[:mmm]' (default: now)")
    p.add_argument("--force", action="store_true", help="overwrite an existing file")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("info", help="show MD fields, geometry and DD state")
    p.add_argument("--store", required=True)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("dump", help="print MD, DD and RD records oldest first")
    p.add_argument("--store", required=True)
    p.add_argument("--from", dest="from_", metavar="T", help="[yyyy:mm:dd ]hh:mm:ss[:mmm]")
    p.add_argument("--to", metavar="T")
    p.add_argument("--fields", metavar="LIST", help="comma-separated RD labels to show")
    p.add_argument("--format", choices=("text", "jsonlines"), default="text")
    p.add_argument("--raw", action="store_true", help="print blob payloads in full")
    p.set_defaults(func=cmd_dump)

    p = sub.add_parser("verify", help="audit store integrity")
    p.add_argument("--store", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("extract", help="write one stored blob to a file")
    p.add_argument("--store", required=True)
    p.add_argument("--label", choices=("camF", "micI"), required=True)
    p.add_argument("--index", type=int, default=0, help="0-based blob index, oldest first")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("serve", help="run the ingest daemon")
    p.add_argument("--store", help="store path (env EBB_STORE)")
    p.add_argument("--listen", help=f"host:port or unix:/path (env EBB_LISTEN, "
                                     f"default {ingestd.DEFAULT_LISTEN})")
    p.add_argument("--idle-timeout", type=float, help="seconds (env EBB_IDLE_TIMEOUT_S, default 30)")
    p.add_argument("--max-record", type=int, help="bytes (env EBB_MAX_RECORD, default slot size)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("generate", help="run the simulated robot")
    _script_args(p)
    p.add_argument("--format", choices=("text", "jsonlines", "wire"), default="text")
    p.add_argument("--out", help="file for --format wire (default: stdout)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("replay", help="feed simulated or recorded RDs to a store or daemon")
    _script_args(p)
    p.add_argument("--input", help="wire-format record file instead of a script")
    p.add_argument("--store", help="write directly into this store")
    p.add_argument("--to", metavar="ADDRESS", help="stream to a daemon at host:port or unix:/path")
    p.add_argument("--speed-factor", type=float, help="replay at real time divided by this")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("scan", help="recover records from a damaged dump or raw image")
    p.add_argument("file")
    p.add_argument("--format", choices=("text", "jsonlines"), default="text")
    p.set_defaults(func=cmd_scan)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ScriptInvalid) as exc:
        print(f"ebbctl {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RejectedRecord as exc:
        print(f"ebbctl {args.command}: {exc}", file=sys.stderr)
        return EXIT_FINDINGS
    except (OSError, TargetUnavailable, StoreError, DecodeError) as exc:
        print(f"ebbctl {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except EbbError as exc:
        print(f"ebbctl {args.command}: {exc}", file=sys.stderr)
        return EXIT_FINDINGS
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())

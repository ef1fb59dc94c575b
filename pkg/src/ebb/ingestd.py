"""Network ingest daemon: the EBB as a stand-alone process next to the robot.

Protocol (stream transport, TCP or a unix socket)::

    daemon -> robot   "EBB/0.1\\n"                      once, on connect
    robot  -> daemon  <encoded RD record>               framed by its own recS
    daemon -> robot   "OK\\n" | "ERR <code>\\n"          one reply per record

Codes: BADREC (undecodable or checksum failure), NOTRD (MD/DD records belong
to the store, not the wire), TOOBIG (larger than a slot or the configured
maximum), INTERNAL. Newlines between records are ignored.

The banner and acknowledgements are the only bytes ever sent to the robot.
They carry no commands, so the robot's operation does not depend on the EBB.
Records that decode but break catalog rules (a wifi status of 2, say) are
still stored, because the recorder must not discard what the robot reports;
the violations are kept on the session for the operator.
"""

from __future__ import annotations

import asyncio
import logging
import os
import signal
import socket
from collections import Counter
from dataclasses import dataclass, field

from .codec import HEAD_LEN, MIN_RECORD, parse_record
from .errors import DecodeError, NotAnRd, RecordTooLarge, TargetUnavailable
from .model import RecordType, Violation, validate_record
from .ringstore import EbbStore

log = logging.getLogger(__name__)

VERSION = "EBB/0.1"
BANNER = (VERSION + "\n").encode("ascii")
DEFAULT_LISTEN = "127.0.0.1:7717"
DEFAULT_IDLE_TIMEOUT = 30.0
_DISCARD_CHUNK = 65536


def parse_address(text: str) -> tuple[str, ...]:
    """``host:port`` -> ("tcp", host, port); ``unix:/path`` -> ("unix", path)."""
    if text.startswith("unix:"):
        return ("unix", text[5:])
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"listen address {text!r} is not host:port or unix:/path")
    return ("tcp", host.strip("[]") or "127.0.0.1", int(port))


def env_config() -> dict:
    """Daemon settings from EBB_LISTEN, EBB_STORE, EBB_IDLE_TIMEOUT_S and EBB_MAX_RECORD."""
    cfg = {}
    if "EBB_LISTEN" in os.environ:
        cfg["listen"] = os.environ["EBB_LISTEN"]
    if "EBB_STORE" in os.environ:
        cfg["store"] = os.environ["EBB_STORE"]
    if "EBB_IDLE_TIMEOUT_S" in os.environ:
        cfg["idle_timeout"] = float(os.environ["EBB_IDLE_TIMEOUT_S"])
    if "EBB_MAX_RECORD" in os.environ:
        cfg["max_record"] = int(os.environ["EBB_MAX_RECORD"])
    return cfg


@dataclass
class IngestSession:
    peer: str
    version: str = VERSION
    records_accepted: int = 0
    rejected: Counter = field(default_factory=Counter)
    violations: list[Violation] = field(default_factory=list)
    transcript: bytearray = field(default_factory=bytearray, repr=False)
    closed: bool = False
    close_reason: str = ""
    in_flight: bool = False


@dataclass(frozen=True)
class IngestStats:
    peer: str
    accepted: int
    rejected: int
    errors: dict[str, int]
    violations: dict[str, int]

    def summary(self) -> str:
        errs = ", ".join(f"{k}={v}" for k, v in sorted(self.errors.items())) or "none"
        viol = ", ".join(f"{k}={v}" for k, v in sorted(self.violations.items())) or "none"
        return (f"{self.peer}: accepted={self.accepted} rejected={self.rejected} "
                f"errors[{errs}] violations[{viol}]")


def drain(session: IngestSession) -> IngestStats:
    """Summarize a finished session for the operator log."""
    if not session.closed:
        raise ValueError("session is still open")
    kinds = Counter(v.kind for v in session.violations)
    return IngestStats(
        peer=session.peer,
        accepted=session.records_accepted,
        rejected=sum(session.rejected.values()),
        errors=dict(session.rejected),
        violations=dict(kinds),
    )


class _FramingLost(Exception):
    pass


class IngestServer:
    def __init__(self, store: EbbStore, *, idle_timeout: float = DEFAULT_IDLE_TIMEOUT,
                 max_record: int | None = None):
        self.store = store
        self.idle_timeout = idle_timeout
        self.max_record = max_record or store.geometry.slot_size
        self.sessions: list[IngestSession] = []
        self._server: asyncio.AbstractServer | None = None
        self._tasks: dict[asyncio.Task, IngestSession] = {}
        self._stopping = False

    async def start(self, listen: str = DEFAULT_LISTEN) -> None:
        addr = parse_address(listen)
        if addr[0] == "unix":
            self._server = await asyncio.start_unix_server(self._handle, path=addr[1])
        else:
            self._server = await asyncio.start_server(self._handle, host=addr[1], port=addr[2])
        log.info("listening on %s", self.address)

    @property
    def address(self) -> str:
        sock = self._server.sockets[0]
        name = sock.getsockname()
        if sock.family == socket.AF_UNIX:
            return f"unix:{name}"
        return f"{name[0]}:{name[1]}"

    async def serve_forever(self) -> None:
        async with self._server:
            try:
                await self._server.serve_forever()
            except asyncio.CancelledError:
                pass

    async def shutdown(self) -> None:
        """Stop accepting, let in-flight records finish, close idle sessions."""
        self._stopping = True
        if self._server is not None:
            self._server.close()
        for task, session in list(self._tasks.items()):
            if not session.in_flight:
                task.cancel()
        if self._tasks:
            await asyncio.gather(*self._tasks, return_exceptions=True)

    # -- per connection -----------------------------------------------------

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        peer = writer.get_extra_info("peername") or "local"
        session = IngestSession(peer=str(peer))
        self.sessions.append(session)
        task = asyncio.current_task()
        self._tasks[task] = session
        try:
            await self._send(writer, session, BANNER)
            while not self._stopping:
                try:
                    frame = await self._read_frame(reader, session)
                except asyncio.IncompleteReadError as exc:
                    session.close_reason = "eof" if not exc.partial else "eof inside record"
                    break
                except asyncio.TimeoutError:
                    session.close_reason = "idle timeout"
                    break
                except _FramingLost as exc:
                    session.rejected["BADREC"] += 1
                    await self._send(writer, session, b"ERR BADREC\n")
                    session.close_reason = str(exc)
                    break
                code = "TOOBIG" if frame is None else self._accept(frame, session)
                if code != "OK":
                    session.rejected[code] += 1
                reply = b"OK\n" if code == "OK" else f"ERR {code}\n".encode("ascii")
                session.in_flight = False
                await self._send(writer, session, reply)
        except asyncio.CancelledError:
            session.close_reason = session.close_reason or "shutdown"
        except ConnectionError as exc:
            session.close_reason = f"connection lost: {exc}"
        finally:
            session.closed = True
            session.in_flight = False
            self._tasks.pop(task, None)
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionError, asyncio.CancelledError):
                pass
            log.info("session closed (%s): %s", session.close_reason, drain(session).summary())

    @staticmethod
    async def _send(writer: asyncio.StreamWriter, session: IngestSession, data: bytes) -> None:
        session.transcript += data
        writer.write(data)
        await writer.drain()

    async def _read_frame(self, reader: asyncio.StreamReader, session: IngestSession) -> bytes | None:
        """Read one record; None means it was too big and has been skipped."""
        timeout = self.idle_timeout
        while True:
            first = await asyncio.wait_for(reader.readexactly(1), timeout)
            if first != b"\n":
                break
        session.in_flight = True
        head = first + await asyncio.wait_for(reader.readexactly(HEAD_LEN - 1), timeout)
        if head[:2] not in (b"MD", b"DD", b"RD") or head[2:8] != b" recS " or head[11:12] != b":":
            raise _FramingLost("unframeable data")
        digits = head[8:11] + head[12:20]
        if not digits.isdigit():
            raise _FramingLost("unframeable data")
        size = int(head[12:20])
        if size < MIN_RECORD:
            raise _FramingLost("recS char count too small")
        remaining = size - HEAD_LEN
        if size > self.max_record:
            while remaining:
                chunk = await asyncio.wait_for(
                    reader.readexactly(min(remaining, _DISCARD_CHUNK)), timeout)
                remaining -= len(chunk)
            return None
        return head + await asyncio.wait_for(reader.readexactly(remaining), timeout)

    def _accept(self, frame: bytes, session: IngestSession) -> str:
        try:
            record, _ = parse_record(frame, 0)
        except DecodeError as exc:
            log.debug("bad record from %s: %s", session.peer, exc)
            return "BADREC"
        if record.record_type != RecordType.RD:
            return "NOTRD"
        session.violations.extend(validate_record(record))
        before = len(self.store.warnings)
        try:
            self.store.append_encoded(frame, record)
        except RecordTooLarge:
            return "TOOBIG"
        except NotAnRd:
            return "NOTRD"
        except Exception:
            log.exception("append failed")
            return "INTERNAL"
        session.violations.extend(self.store.warnings[before:])
        session.records_accepted += 1
        return "OK"


async def _run(store: EbbStore, listen: str, idle_timeout: float, max_record: int | None,
               ready=None) -> list[IngestSession]:
    server = IngestServer(store, idle_timeout=idle_timeout, max_record=max_record)
    await server.start(listen)
    if ready is not None:
        ready(server)
    loop = asyncio.get_running_loop()
    serving = asyncio.ensure_future(server.serve_forever())
    stop = asyncio.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        try:
            loop.add_signal_handler(sig, stop.set)
        except (NotImplementedError, RuntimeError):
            pass
    await stop.wait()
    await server.shutdown()
    serving.cancel()
    return server.sessions


def serve(listen: str, store: EbbStore, *, idle_timeout: float = DEFAULT_IDLE_TIMEOUT,
          max_record: int | None = None, ready=None) -> list[IngestSession]:
    """Run the daemon until SIGINT/SIGTERM; returns the sessions it handled."""
    return asyncio.run(_run(store, listen, idle_timeout, max_record, ready))


# -- client side ------------------------------------------------------------


class IngestClient:
    """Blocking robot-side client; records everything the daemon sends."""

    def __init__(self, address: str, timeout: float = 10.0):
        addr = parse_address(address)
        try:
            if addr[0] == "unix":
                self.sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
                self.sock.settimeout(timeout)
                self.sock.connect(addr[1])
            else:
                self.sock = socket.create_connection((addr[1], addr[2]), timeout=timeout)
        except OSError as exc:
            raise TargetUnavailable(f"cannot reach EBB daemon at {address}: {exc}") from None
        self._in = self.sock.makefile("rb")
        self.transcript = bytearray()
        banner = self._readline()
        if banner != BANNER:
            self.close()
            raise TargetUnavailable(f"unexpected banner {bytes(banner)!r}")

    def _readline(self) -> bytes:
        line = self._in.readline(64)
        self.transcript += line
        return line

    def send(self, data: bytes) -> str:
        self.sock.sendall(data)
        line = self._readline()
        if not line.endswith(b"\n"):
            raise ConnectionError("daemon closed the connection")
        return line[:-1].decode("ascii")

    def send_raw(self, data: bytes) -> None:
        self.sock.sendall(data)

    def read_reply(self) -> str:
        line = self._readline()
        if not line.endswith(b"\n"):
            raise ConnectionError("daemon closed the connection")
        return line[:-1].decode("ascii")

    def read_rest(self) -> bytes:
        """Read until the daemon closes; appended to the transcript."""
        rest = self._in.read()
        self.transcript += rest
        return rest

    def close(self) -> None:
        try:
            self._in.close()
        finally:
            self.sock.close()

    def __enter__(self) -> IngestClient:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

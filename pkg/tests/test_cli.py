from __future__ import annotations

import json
import os
import signal
import socket
import subprocess
import sys

import pytest

from ebb.cli import main, parse_moment, UsageError
from ebb.codec import parse_stream
from ebb.model import EbbDate, EbbTime
from ebb.ringstore import EbbStore
from ebb.simbot import camera_frame, generate

TABLE4 = ["--bot-name", "NAO", "--bot-version", "4", "--bot-manufacturer", "Aldebaran",
          "--operator", "Bristol Robotics Lab", "--responsible", "A Winfield +44 117 328 6913",
          "--ebb-name", "PyEBB v1.2", "--at", "2022:04:20 16:40:20:000"]


@pytest.fixture
def store(tmp_path):
    path = str(tmp_path / "s.ebb")
    assert main(["init", "--store", path, "--slots", "400", *TABLE4]) == 0
    return path


@pytest.fixture
def fed(store, capsys):
    assert main(["replay", "--store", store, "--script", "table9", "--duration", "25"]) == 0
    capsys.readouterr()
    return store


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


# -- init / info ------------------------------------------------------------


def test_init_and_info_echo_md(store, capsys):
    code, out, _ = run(capsys, "info", "--store", store)
    assert code == 0
    for label, value in [("botN", "NAO"), ("botV", "4"), ("botM", "Aldebaran"),
                         ("opeR", "Bristol Robotics Lab"), ("resP", "A Winfield +44 117 328 6913"),
                         ("ebbN", "PyEBB v1.2")]:
        assert f"{label:<12} {value}" in out
    code, out, _ = run(capsys, "info", "--store", store, "--format", "json")
    info = json.loads(out)
    assert info["capacity"] == 400 and info["total_records"] == 0


def test_init_md_is_bit_identical_to_golden(store):
    from conftest import CONFORMANCE

    assert EbbStore.open(store).md == parse_stream((CONFORMANCE / "md.ebb").read_bytes())[0][1]


def test_init_from_md_file(tmp_path, capsys):
    md = tmp_path / "md.txt"
    md.write_text("# robot\nbotN: NAO\nbot-manufacturer: Aldebaran\nresP: someone\nebbN: e\n")
    path = str(tmp_path / "x.ebb")
    assert run(capsys, "init", "--store", path, "--slots", "3", "--md-from", str(md))[0] == 0
    assert EbbStore.open(path).info()["md"]["resP"] == "someone"


@pytest.mark.parametrize("argv", [
    ["--slots", "4", "--bot-name", "NAO", "--bot-manufacturer", "A", "--ebb-name", "E"],
    ["--slots", "0", *TABLE4],
    ["--slots", "4", "--slot-size", "1000", *TABLE4],
    ["--slots", "4", "--bot-name", "N\0", "--bot-manufacturer", "A", "--ebb-name", "E",
     "--responsible", "R"],
])
def test_init_usage_errors(tmp_path, capsys, argv):
    code, _, err = run(capsys, "init", "--store", str(tmp_path / "s.ebb"), *argv)
    assert code == 2 and err
    assert not (tmp_path / "s.ebb").exists()


def test_init_existing_file_is_io_error(store, capsys):
    assert run(capsys, "init", "--store", store, "--slots", "4", *TABLE4)[0] == 3


def test_argparse_usage_exit_code(capsys):
    with pytest.raises(SystemExit) as info:
        main(["dump"])
    assert info.value.code == 2


# -- dump -------------------------------------------------------------------


def test_dump_empty_store(store, capsys):
    code, out, _ = run(capsys, "dump", "--store", store)
    lines = out.splitlines()
    assert code == 0 and [line[:2] for line in lines] == ["MD", "DD"]
    assert "botN NAO" in lines[0]


def test_dump_table9_store(fed, capsys):
    code, out, _ = run(capsys, "dump", "--store", fed)
    rd = [line for line in out.splitlines() if line.startswith("RD ")]
    assert code == 0 and len(rd) == 17
    times = [line.split(" ebbT ")[1][:12] for line in rd]
    assert times == sorted(times)
    assert "<camF 01 319 sha256:" in rd[2]


def test_dump_time_window(fed, capsys):
    records = generate("table9", seed=0, duration=25)
    start = EbbTime(8, 40, 30, 0)
    expected = [str(r.ebb_time) for r in records if r.ebb_time >= start]
    _, out, _ = run(capsys, "dump", "--store", fed, "--from", "08:40:30")
    got = [line.split(" ebbT ")[1][:12] for line in out.splitlines() if line.startswith("RD ")]
    assert got == expected and len(got) == 11
    _, out, _ = run(capsys, "dump", "--store", fed, "--from", "2022:04:20 08:40:25",
                    "--to", "2022:04:20 08:40:27:100")
    assert sum(line.startswith("RD ") for line in out.splitlines()) == 3


def test_dump_jsonlines_round_trips(fed, capsys):
    _, out, _ = run(capsys, "dump", "--store", fed, "--format", "jsonlines", "--fields", "botT,txtC")
    rows = [json.loads(line) for line in out.splitlines()]
    assert [row["type"] for row in rows[:2]] == ["MD", "DD"]
    rds = rows[2:]
    assert len(rds) == 17
    assert all(set(row) == {"type", "recS", "ebbD", "ebbT", "fields", "chkS"} for row in rds)
    assert rds[4]["fields"] == [["botT", "08:40:27:100"], ["txtC", "Halt"]]


def test_dump_raw_blob(fed, capsys):
    _, out, _ = run(capsys, "dump", "--store", fed, "--raw", "--fields", "camF")
    line = [x for x in out.splitlines() if "camF" in x][0]
    assert f"camF 01:00000319:{camera_frame().hex().upper()}" in line


def test_dump_bad_time(store, capsys):
    assert run(capsys, "dump", "--store", store, "--from", "8:40")[0] == 2


def test_parse_moment():
    assert parse_moment("08:40:30") == (None, EbbTime(8, 40, 30, 0))
    assert parse_moment("2022:04:20 08:40:30:250") == (EbbDate(2022, 4, 20), EbbTime(8, 40, 30, 250))
    with pytest.raises(UsageError):
        parse_moment("2022:02:30 08:40:30")


# -- verify / extract -------------------------------------------------------


def test_verify(fed, capsys, tmp_path):
    assert run(capsys, "verify", "--store", fed)[0] == 0
    g = EbbStore.open(fed).geometry
    with open(fed, "r+b") as fh:
        fh.seek(g.slot_offset(3) + 50)
        fh.write(b"#")
    code, out, _ = run(capsys, "verify", "--store", fed)
    assert code == 1
    assert out.splitlines()[0].startswith("CorruptSlot slot 3")
    assert "1 finding(s)" in out
    assert run(capsys, "dump", "--store", fed)[0] == 1
    assert run(capsys, "verify", "--store", str(tmp_path / "missing"))[0] == 3


def test_extract(fed, capsys, tmp_path):
    out = tmp_path / "frame.jpg"
    assert run(capsys, "extract", "--store", fed, "--label", "camF", "--index", "2",
               "--out", str(out))[0] == 0
    assert out.read_bytes() == camera_frame()
    assert run(capsys, "extract", "--store", fed, "--label", "camF", "--index", "3",
               "--out", str(out))[0] == 2
    assert run(capsys, "extract", "--store", fed, "--label", "micI", "--out", str(out))[0] == 2


# -- generate / replay / scan -----------------------------------------------


def test_generate_text(capsys):
    code, out, _ = run(capsys, "generate", "--script", "table9", "--duration", "25")
    lines = out.splitlines()
    assert code == 0 and len(lines) == 17
    assert lines[4].split(" ebbT ")[1].startswith("08:40:27:100 botT 08:40:27:100 txtC Halt")


def test_generate_wire_then_replay_and_scan(tmp_path, store, capsys):
    wire = tmp_path / "g.ebbs"
    assert run(capsys, "generate", "--format", "wire", "--out", str(wire))[0] == 0
    assert [r for _, r in parse_stream(wire.read_bytes())] == generate("table9", 0, 25)
    code, out, _ = run(capsys, "replay", "--input", str(wire), "--store", store)
    assert code == 0 and "accepted 17" in out
    code, out, _ = run(capsys, "scan", str(wire))
    assert code == 0 and len(out.splitlines()) == 17
    damaged = bytearray(wire.read_bytes())
    damaged[300:310] = b"##########"
    wire.write_bytes(bytes(damaged))
    code, out, _ = run(capsys, "scan", str(wire))
    assert code == 1 and "GAP offset" in out


def test_replay_needs_exactly_one_target(store, capsys):
    assert run(capsys, "replay")[0] == 2
    assert run(capsys, "replay", "--store", store, "--to", "127.0.0.1:1")[0] == 2


def test_replay_to_closed_port(capsys):
    assert run(capsys, "replay", "--to", "127.0.0.1:1")[0] == 3


def test_bad_script_is_usage_error(capsys, tmp_path):
    bad = tmp_path / "bad.script"
    bad.write_text("0 motor_sensor\n")
    assert run(capsys, "generate", "--script", str(bad))[0] == 2


# -- serve ------------------------------------------------------------------


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def test_serve_replay_round_trip(tmp_path, store, capsys):
    direct = str(tmp_path / "direct.ebb")
    assert main(["init", "--store", direct, "--slots", "400", *TABLE4]) == 0
    assert main(["replay", "--store", direct]) == 0
    address = f"127.0.0.1:{free_port()}"
    env = dict(os.environ, EBB_STORE=store, EBB_LISTEN=address)
    proc = subprocess.Popen([sys.executable, "-m", "ebb.cli", "serve"], env=env,
                            stderr=subprocess.PIPE, text=True)
    try:
        assert proc.stderr.readline().startswith("listening on")
        occupied = subprocess.run([sys.executable, "-m", "ebb.cli", "serve", "--store", direct,
                                   "--listen", address], capture_output=True, text=True)
        assert occupied.returncode == 3
        assert main(["replay", "--to", address, "--speed-factor", "1000"]) == 0
    finally:
        proc.send_signal(signal.SIGINT)
        _, err = proc.communicate(timeout=10)
    assert proc.returncode == 0
    assert "accepted=17" in err
    assert EbbStore.open(store).rd_region() == EbbStore.open(direct).rd_region()

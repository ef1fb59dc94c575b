from __future__ import annotations

import datetime as dt
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from ebb.model import RecordType, build_record
from ebb.ringstore import EbbStore, MediaGeometry, make_md

settings.register_profile(
    "ebb", deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large,
                                     HealthCheck.large_base_example]
)
settings.load_profile("ebb")

ROOT = Path(__file__).resolve().parent.parent
CONFORMANCE = ROOT / "conformance"

# Acceptance criteria report: test_acceptance.py stores one verdict per
# criterion here and the terminal summary prints them as PASS/FAIL lines.
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def record_acceptance(number: int, title: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE[number] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        verdict = "PASS" if passed else "FAIL"
        line = f"AC{number} {verdict}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)


class FixedClock:
    """Deterministic clock for DD timestamps; advances 1 ms per call."""

    def __init__(self, start: dt.datetime = dt.datetime(2022, 4, 20, 8, 40, 0)):
        self.now = start

    def __call__(self) -> dt.datetime:
        self.now += dt.timedelta(milliseconds=1)
        return self.now


@pytest.fixture
def md_record():
    return make_md("2022:04:20", "16:40:20:000", name="NAO", manufacturer="Aldebaran",
                   responsible="A Winfield +44 117 328 6913", ebb_name="PyEBB v1.2",
                   version="4", operator="Bristol Robotics Lab")


@pytest.fixture
def make_store(tmp_path, md_record):
    counter = iter(range(10_000))

    def factory(capacity: int = 4, slot_size: int = 512, header_size: int = 1024, **kw) -> EbbStore:
        path = tmp_path / f"store{next(counter)}.ebb"
        geometry = MediaGeometry(slot_size=slot_size, capacity=capacity, header_size=header_size)
        kw.setdefault("clock", FixedClock())
        return EbbStore.init(path, geometry, md_record, **kw)

    return factory


def rd_at(second: int, ms: int = 0, *extra) -> object:
    """Small RD record stamped 2022:04:20 08:40:ss:mmm plus ``extra`` fields."""
    moment = dt.datetime(2022, 4, 20, 8, 40) + dt.timedelta(seconds=second, milliseconds=ms)
    fields = [("botT", moment.time()), *extra]
    return build_record(RecordType.RD, moment.date(), moment.time(), fields)

"""Catalog-valid record generators shared by the property and acceptance tests."""

from __future__ import annotations

import datetime as dt
import math
import random

from hypothesis import strategies as st

from ebb.model import CATALOG, EbbDate, EbbTime, RecordType, build_record

TEXT = st.text(alphabet=st.characters(blacklist_characters="\0", blacklist_categories=("Cs",)),
               max_size=40)


def _fill(pattern: str, draw_digit, draw_sign) -> str:
    return "".join(draw_digit() if c == "0" else draw_sign() if c == "±" else c for c in pattern)


dates = st.dates(min_value=dt.date(1, 1, 1), max_value=dt.date(9999, 12, 31)).map(EbbDate.from_date)
times = st.builds(EbbTime, st.integers(0, 23), st.integers(0, 59), st.integers(0, 59),
                  st.integers(0, 999))


@st.composite
def fixed_value(draw, pattern: str) -> str:
    return _fill(pattern, lambda: str(draw(st.integers(0, 9))), lambda: draw(st.sampled_from("+-")))


@st.composite
def field_value(draw, spec, max_blob: int):
    kind = spec.kind.value
    if kind == "string":
        return draw(TEXT)
    if kind == "fixed":
        return draw(fixed_value(spec.pattern))
    if kind == "date":
        if (spec.record_type, spec.label) in (("DD", "ebD1"), ("DD", "ebDM")) and draw(st.booleans()):
            return EbbDate(0, 0, 0)
        return draw(dates)
    if kind == "time":
        return draw(times)
    if kind == "blob":
        return (draw(st.integers(0, 99)), draw(st.binary(max_size=max_blob)))
    if kind == "sysx":
        return (draw(st.integers(0, 99)), draw(TEXT))
    if kind == "wifi":
        return f"{draw(st.integers(0, 1))}:{draw(st.integers(0, 99)):02d}"
    if kind == "decision":
        return (draw(st.integers(0, 9999)), draw(TEXT))
    raise AssertionError(kind)


def _data_specs(rt: RecordType):
    return [s for s in CATALOG[rt] if s.label not in ("recS", "ebbD", "ebbT", "chkS")]


@st.composite
def records(draw, record_type=None, max_blob: int = 512):
    """Any catalog-valid record, built through the public constructor."""
    rt = RecordType(draw(st.sampled_from(["MD", "DD", "RD"]))) if record_type is None \
        else RecordType(record_type)
    fields = []
    for spec in _data_specs(rt):
        if spec.repeatable:
            count = draw(st.integers(1 if spec.required else 0, 3))
        else:
            count = 1 if spec.required or draw(st.booleans()) else 0
        fields += [(spec.label, draw(field_value(spec, max_blob))) for _ in range(count)]
    return build_record(rt, draw(dates), draw(times), fields)


# -- seeded generator for bulk runs ------------------------------------------


class RecordFactory:
    """Fast seeded generator for large randomized corpora.

    Blob sizes are log-uniform between 1 byte and ``max_blob`` and a share of
    blobs is pinned at exactly ``max_blob`` so the upper bound is exercised.
    """

    def __init__(self, seed: int, max_blob: int = 64 * 1024, blob_share: float = 0.2):
        self.rng = random.Random(seed)
        self.max_blob = max_blob
        self.blob_share = blob_share

    def text(self) -> str:
        rng = self.rng
        n = rng.randint(0, 30)
        pool = "abcdefghijklmnopqrstuvwxyz ABCXYZ0123456789:-+.,éß€漢ÿ\n\t"
        return "".join(rng.choice(pool) for _ in range(n))

    def blob_size(self) -> int:
        if self.rng.random() < 0.05:
            return self.max_blob
        return int(math.exp(self.rng.uniform(0, math.log(self.max_blob))))

    def date(self) -> EbbDate:
        return EbbDate.from_date(dt.date(2000, 1, 1) + dt.timedelta(days=self.rng.randint(0, 20000)))

    def time(self) -> EbbTime:
        r = self.rng
        return EbbTime(r.randint(0, 23), r.randint(0, 59), r.randint(0, 59), r.randint(0, 999))

    def value(self, spec):
        r = self.rng
        kind = spec.kind.value
        if kind == "string":
            return self.text()
        if kind == "fixed":
            return _fill(spec.pattern, lambda: str(r.randint(0, 9)), lambda: r.choice("+-"))
        if kind == "date":
            return self.date()
        if kind == "time":
            return self.time()
        if kind == "blob":
            return (r.randint(0, 99), r.randbytes(self.blob_size()))
        if kind == "sysx":
            return (r.randint(0, 99), self.text())
        if kind == "wifi":
            return f"{r.randint(0, 1)}:{r.randint(0, 99):02d}"
        if kind == "decision":
            return (r.randint(0, 9999), self.text())
        raise AssertionError(kind)

    def record(self):
        r = self.rng
        rt = RecordType(r.choice(["MD", "DD", "RD", "RD"]))
        fields = []
        for spec in _data_specs(rt):
            if spec.kind.value == "blob":
                count = 1 if r.random() < self.blob_share else 0
            elif spec.repeatable:
                count = r.randint(1 if spec.required else 0, 3)
            else:
                count = 1 if spec.required or r.random() < 0.5 else 0
            fields += [(spec.label, self.value(spec)) for _ in range(count)]
        return build_record(rt, self.date(), self.time(), fields)

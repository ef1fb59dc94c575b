"""Regenerate the pinned conformance encodings under conformance/.

The goldens are the three worked example records (meta data, data data and
robot data) encoded by this library after the corrections listed in
conformance/README.md. Tests rebuild the same bytes with an independent
hand-written encoder, so rerunning this script is only needed when the
example content itself changes.
"""

from __future__ import annotations

from pathlib import Path

from ebb.codec import encode_record
from ebb.model import RecordType, build_record

OUT = Path(__file__).resolve().parent.parent / "conformance"

MD_FIELDS = [
    ("botN", "NAO"),
    ("botV", "4"),
    ("botM", "Aldebaran"),
    ("opeR", "Bristol Robotics Lab"),
    ("resP", "A Winfield +44 117 328 6913"),
    ("ebbN", "PyEBB v1.2"),
]

DD_FIELDS = [
    ("ebbN", "0000000400"),
    ("ebbX", "0000000001545060"),
    ("ebD1", "2022:03:01"),
    ("ebT1", "08:00:30:000"),
    ("ebDM", "2022:05:01"),
    ("ebTM", "18:59:30:100"),
]

RD_FIELDS = [
    ("botT", "16:40:20:000"),
    ("batL", "255"),
    ("actV", "001:-0175.54"),
    ("actV", "002:+0102.09"),
    *[("irSe", f"{i:02d}:{v:03d}") for i, v in enumerate([50, 50, 50, 50, 50, 230, 150, 50], 1)],
    ("decC", "0020:obstacle detected"),
    ("wifi", "1:99"),
]


def goldens() -> dict[str, bytes]:
    date, time = "2022:04:20", "16:40:20:000"
    return {
        "md.ebb": encode_record(build_record(RecordType.MD, date, time, MD_FIELDS)),
        "dd.ebb": encode_record(build_record(RecordType.DD, date, time, DD_FIELDS)),
        "rd.ebb": encode_record(build_record(RecordType.RD, date, time, RD_FIELDS)),
    }


if __name__ == "__main__":
    OUT.mkdir(exist_ok=True)
    for name, data in goldens().items():
        (OUT / name).write_bytes(data)
        print(f"{name}: {len(data)} bytes")

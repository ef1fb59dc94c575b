"""Regenerate the blob fixtures bundled with the simulated robot.

Run once; the outputs are committed under src/ebb/data/.
"""

from __future__ import annotations

import io
import math
import wave
from pathlib import Path

from PIL import Image

DATA = Path(__file__).resolve().parent.parent / "src" / "ebb" / "data"


def frame() -> bytes:
    img = Image.new("L", (64, 64))
    img.putdata([(x * 4) ^ (y * 4) for y in range(64) for x in range(64)])
    buf = io.BytesIO()
    img.save(buf, format="JPEG", quality=40, optimize=True)
    return buf.getvalue()


def chirp() -> bytes:
    rate = 8000
    samples = bytes(
        int(128 + 100 * math.sin(2 * math.pi * (400 + 4000 * i / rate) * i / rate)) & 0xFF
        for i in range(rate // 20)
    )
    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(1)
        w.setframerate(rate)
        w.writeframes(samples)
    return buf.getvalue()


if __name__ == "__main__":
    (DATA / "frame64.jpg").write_bytes(frame())
    (DATA / "chirp.wav").write_bytes(chirp())
    for name in ("frame64.jpg", "chirp.wav"):
        print(name, (DATA / name).stat().st_size)

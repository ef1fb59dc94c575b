"""Crash injection for store writes."""

from __future__ import annotations

import random


class SimulatedCrash(Exception):
    pass


def arm_crash(store, write_index: int, keep_bytes: int | None, rng: random.Random | None = None):
    """Make the ``write_index``-th raw write from now on tear and raise.

    ``keep_bytes`` bytes of that write reach the media before the crash
    (``None`` picks a random prefix length, possibly all or nothing). Every
    earlier write goes through untouched. Returns a dict describing the crash.
    """
    real = store._pwrite
    state = {"calls": 0, "fired": False, "offset": None, "kept": None}

    def pwrite(offset: int, data: bytes) -> None:
        if state["fired"]:
            raise SimulatedCrash("store is dead")
        if state["calls"] == write_index:
            kept = keep_bytes if keep_bytes is not None else (rng or random).randint(0, len(data))
            kept = min(kept, len(data))
            if kept:
                real(offset, data[:kept])
            state.update(fired=True, offset=offset, kept=kept)
            raise SimulatedCrash(f"crash during write {write_index} after {kept} bytes")
        state["calls"] += 1
        real(offset, data)

    store._pwrite = pwrite
    return state

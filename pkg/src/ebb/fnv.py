"""FNV-1a 64-bit hashing for record checksums.

The hash is computed over every record byte that precedes the checksum
data. The stored ``chkS`` value is the low 32 bits of the 64-bit hash as
eight uppercase hex digits.

Inputs above :data:`JIT_THRESHOLD` bytes are hashed by a numba-compiled
loop (blob-bearing records run to hundreds of kilobytes of hex text);
shorter inputs use the pure Python loop so small tools never pay the JIT
start-up cost. Both paths produce identical results.
"""

from __future__ import annotations

FNV64_OFFSET_BASIS = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

JIT_THRESHOLD = 4096

_jit_kernel = None


def fnv1a_64_py(data: bytes, h: int = FNV64_OFFSET_BASIS) -> int:
    for byte in data:
        h = ((h ^ byte) * FNV64_PRIME) & _MASK64
    return h


def _load_kernel():
    global _jit_kernel
    if _jit_kernel is None:
        try:
            import numba
            import numpy as np
        except ImportError:  # pragma: no cover - numba is a declared dependency
            _jit_kernel = False
            return _jit_kernel

        prime = np.uint64(FNV64_PRIME)

        @numba.njit(cache=True, nogil=True)
        def kernel(buf, h):
            for i in range(buf.shape[0]):
                h = (h ^ np.uint64(buf[i])) * prime
            return h

        def run(data: bytes, h: int) -> int:
            arr = np.frombuffer(data, dtype=np.uint8)
            return int(kernel(arr, np.uint64(h)))

        _jit_kernel = run
    return _jit_kernel


def fnv1a_64(data: bytes) -> int:
    if len(data) >= JIT_THRESHOLD:
        kernel = _load_kernel()
        if kernel:
            return kernel(bytes(data), FNV64_OFFSET_BASIS)
    return fnv1a_64_py(data)


def render(hash64: int) -> str:
    return f"{hash64 & 0xFFFFFFFF:08X}"


def checksum_text(data: bytes) -> str:
    return render(fnv1a_64(data))

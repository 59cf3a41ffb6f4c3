"""Counter-based randomness: Philox4x32-10 keyed by (seed, stream, block).

The normal draw consumed by step ``k`` of stream ``s`` is a pure function of
``(seed, s, k)``: block index ``(k-1)*blocks_per_step + j`` goes into the
Philox counter words 0-1, the stream index into words 2-3, and the 64-bit
seed into the key.  Each block yields two uint64 words, mapped to uniforms in
(0,1) via ``((v >> 11) + 0.5) * 2**-53`` and to normals via the inverse CDF.
Both backends (compiled and numpy) evaluate exactly this pipeline.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)
UNIT53 = 1.0 / 9007199254740992.0  # 2**-53, exact

MASK64 = 0xFFFFFFFFFFFFFFFF


def philox4x32(ctr_lo, ctr_hi, stream_lo, stream_hi, key_lo, key_hi):
    """One Philox4x32-10 block per element; all inputs uint64 arrays/scalars
    holding 32-bit words.  Returns the four output words as uint64 arrays."""
    x0 = np.asarray(ctr_lo, dtype=np.uint64)
    x1 = np.asarray(ctr_hi, dtype=np.uint64)
    x2 = np.asarray(stream_lo, dtype=np.uint64)
    x3 = np.asarray(stream_hi, dtype=np.uint64)
    k0 = np.uint64(key_lo)
    k1 = np.uint64(key_hi)
    for _ in range(10):
        p0 = _M0 * x0
        p1 = _M1 * x2
        hi0 = p0 >> _SHIFT32
        lo0 = p0 & _MASK32
        hi1 = p1 >> _SHIFT32
        lo1 = p1 & _MASK32
        x0 = hi1 ^ x1 ^ k0
        x1 = lo1
        x2 = (hi0 ^ x3 ^ k1) & _MASK32
        x3 = lo0
        k0 = (k0 + _W0) & _MASK32
        k1 = (k1 + _W1) & _MASK32
    return x0 & _MASK32, x1, x2, x3


def block_words(seed, streams, blocks):
    """uint64 output pair (v0, v1) for each (stream, block) element."""
    seed = np.uint64(seed)
    streams = np.asarray(streams, dtype=np.uint64)
    blocks = np.asarray(blocks, dtype=np.uint64)
    y0, y1, y2, y3 = philox4x32(
        blocks & _MASK32,
        blocks >> _SHIFT32,
        streams & _MASK32,
        streams >> _SHIFT32,
        seed & _MASK32,
        seed >> _SHIFT32,
    )
    v0 = (y0 << _SHIFT32) | y1
    v1 = (y2 << _SHIFT32) | y3
    return v0, v1


def uniforms(seed, streams, blocks):
    """Pair of open-(0,1) uniforms per (stream, block) element."""
    v0, v1 = block_words(seed, streams, blocks)
    eleven = np.uint64(11)
    u0 = ((v0 >> eleven).astype(np.float64) + 0.5) * UNIT53
    u1 = ((v1 >> eleven).astype(np.float64) + 0.5) * UNIT53
    return u0, u1


def normal_pair(seed, streams, blocks):
    """Pair of standard normals per (stream, block) element (inverse CDF)."""
    u0, u1 = uniforms(seed, streams, blocks)
    return ndtri(u0), ndtri(u1)


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & MASK64
    return h


def derive_seed(seed: int, tag: str) -> int:
    """Decorrelated per-operation seed, a pure function of (seed, tag)."""
    return _splitmix64((int(seed) & MASK64) ^ _fnv1a64(tag))

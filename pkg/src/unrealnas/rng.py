"""Counter-based random streams keyed by (seed, purpose, index).

Every random quantity in the package is drawn from a stream identified by a
global seed, a purpose tag and an optional index, so results do not depend on
generation order or on how work is split across workers.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def tag_id(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def _entropy(seed: int, tag: str, *index: int) -> list[int]:
    # SeedSequence only accepts non-negative words; fold signed 64-bit seeds.
    return [int(seed) & _MASK64, tag_id(tag), *(int(i) & _MASK64 for i in index)]


def stream(seed: int, tag: str, *index: int) -> np.random.Generator:
    """Independent Philox generator for ``(seed, tag, *index)``."""
    ss = np.random.SeedSequence(_entropy(seed, tag, *index))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, tag: str, *index: int) -> int:
    """A 63-bit integer seed derived from ``(seed, tag, *index)``."""
    ss = np.random.SeedSequence(_entropy(seed, tag, *index))
    return int(ss.generate_state(1, dtype=np.uint64)[0]) >> 1


def uniform_indices(seed: int, tag: str, n: int, high: int, start: int = 0) -> np.ndarray:
    """Integers ``u_i`` in ``[0, high)`` for counters ``start .. start+n-1``.

    Element ``i`` depends only on ``(seed, tag, start + i)``: it is taken from
    the ``start + i``-th raw 64-bit word of a keyed Philox stream.
    """
    if high < 1:
        raise ValueError(f"high must be >= 1, got {high}")
    ss = np.random.SeedSequence(_entropy(seed, tag))
    bg = np.random.Philox(ss)
    # Each Philox counter step yields four 64-bit words.
    block, offset = divmod(int(start), 4)
    if block:
        bg = bg.advance(block)
    raw = np.asarray(bg.random_raw(n + offset), dtype=np.uint64)[offset:]
    # 53-bit mantissa -> [0, 1); bias is at most high / 2**53.
    u = (raw >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
    return np.minimum((u * high).astype(np.int64), high - 1)

"""Plain-int bitsets: bit i set <=> example i is in the set."""

from __future__ import annotations

import numpy as np


def from_bools(mask) -> int:
    """Pack a boolean sequence into an int bitset (bit i = mask[i])."""
    bits = np.packbits(np.asarray(mask, dtype=bool), bitorder="little")
    return int.from_bytes(bits.tobytes(), "little")


def to_bools(bits: int, n: int) -> np.ndarray:
    raw = bits.to_bytes((n + 7) // 8, "little")
    return np.unpackbits(np.frombuffer(raw, dtype=np.uint8), count=n, bitorder="little").astype(bool)


def from_indices(indices, n: int) -> int:
    mask = np.zeros(n, dtype=bool)
    mask[list(indices)] = True
    return from_bools(mask)


def indices(bits: int) -> list[int]:
    out = []
    i = 0
    while bits:
        low = bits & -bits
        out.append(low.bit_length() - 1)
        bits ^= low
    return out


def all_ones(n: int) -> int:
    return (1 << n) - 1


def to_bytes(bits: int, n: int) -> bytes:
    """Little-endian packed payload of fixed width; round-trips with from_bytes."""
    return bits.to_bytes((n + 7) // 8, "little")


def from_bytes(raw: bytes) -> int:
    return int.from_bytes(raw, "little")

"""Exponent-aligned fixed point and MSB-first negabinary bitplanes.

A block of ``count`` values shares one exponent ``e``; each value becomes the
integer ``q = trunc(v * 2**(B - e))`` and is then written in base -2 with
``B + 1`` digits, so every bitplane is unsigned. Plane 0 carries the most
significant digit. Each plane is ``ceil(count / 64)`` little-endian 64-bit
words, element ``j`` at bit ``j % 64`` of word ``j // 64``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import BadBitplaneCount, NonFiniteInput, ShortInput

WORD_BITS = 64
# digits at odd positions carry negative weight
_NEG_MASK = 0xAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAA


class Layout(IntEnum):
    SEQUENTIAL_BLOCK = 0
    INTERLEAVED_TILE = 1


def num_planes(B: int) -> int:
    return B + 1


def plane_nbytes(count: int) -> int:
    return -(-count // WORD_BITS) * (WORD_BITS // 8)


def negabinary_range(digits: int) -> tuple:
    """Smallest and largest integers representable with ``digits`` base -2 digits."""
    hi = sum(1 << i for i in range(0, digits, 2))
    lo = -sum(1 << i for i in range(1, digits, 2))
    return lo, hi


def _wide(B: int) -> bool:
    # uint64 holds at most 64 digits; beyond that fall back to Python ints
    return num_planes(B) > 64


@dataclass
class FixedPointBlock:
    e: int
    B: int
    q: np.ndarray
    count: int

    @property
    def lsb(self) -> float:
        return math.ldexp(1.0, self.e - self.B)

    def values(self) -> np.ndarray:
        return fixed_to_float(self.q, self.e, self.B)


def fixed_to_float(q, e: int, B: int) -> np.ndarray:
    qf = np.array([float(v) for v in q], dtype=np.float64) if q.dtype == object else q.astype(np.float64)
    return np.ldexp(qf, e - B)


def _check_B(B):
    if not 1 <= B <= 64:
        raise BadBitplaneCount(f"B must be in 1..64, got {B}")


def align_fixed_point(values, B: int) -> FixedPointBlock:
    """Align ``values`` to a shared exponent and truncate to ``B``-bit fixed point.

    ``e`` is the smallest integer with ``max|v| < 2**e``, raised by one when a
    value would otherwise fall outside the ``B + 1``-digit negabinary range
    (only possible near ``-2**e`` or ``+2**e`` depending on the parity of B).
    """
    _check_B(B)
    v = np.asarray(values, dtype=np.float64).ravel()
    if not np.all(np.isfinite(v)):
        raise NonFiniteInput("input contains NaN or Inf")
    count = v.size
    vmax = float(np.max(np.abs(v))) if count else 0.0
    if vmax == 0.0:
        q = np.zeros(count, dtype=object if _wide(B) else np.int64)
        return FixedPointBlock(0, B, q, count)

    e = math.frexp(vmax)[1]
    lo, hi = negabinary_range(num_planes(B))
    for shift in (0, 1):
        t = np.trunc(np.ldexp(v, B - (e + shift)))
        if B >= 64:
            q = np.array([int(x) for x in t], dtype=object)
        else:
            q = t.astype(np.int64)
        if int(q.min()) >= lo and int(q.max()) <= hi:
            return FixedPointBlock(e + shift, B, q, count)
    raise AssertionError("unreachable: one exponent bump always fits")


def to_negabinary(q, B: int) -> np.ndarray:
    """Base -2 digit strings of ``q`` packed little-endian into unsigned integers."""
    q = np.asarray(q)
    if _wide(B):
        mask = _NEG_MASK & ((1 << num_planes(B)) - 1)
        return np.array([(int(x) + mask) ^ mask for x in q.ravel()], dtype=object).reshape(q.shape)
    m = np.uint64(_NEG_MASK & 0xFFFFFFFFFFFFFFFF)
    u = q.astype(np.int64).view(np.uint64)
    with np.errstate(over="ignore"):
        return (u + m) ^ m


def from_negabinary(n, B: int) -> np.ndarray:
    n = np.asarray(n)
    if _wide(B):
        mask = _NEG_MASK & ((1 << num_planes(B)) - 1)
        return np.array([(int(x) ^ mask) - mask for x in n.ravel()], dtype=object).reshape(n.shape)
    m = np.uint64(_NEG_MASK & 0xFFFFFFFFFFFFFFFF)
    with np.errstate(over="ignore"):
        return ((n.astype(np.uint64) ^ m) - m).view(np.int64)


def layout_permutation(count: int, B: int, layout) -> np.ndarray:
    """``perm[j]`` is the element stored at bit position ``j`` of every plane.

    The interleaved tile maps position ``j`` of a full ``64 * (B + 1)`` tile to
    element ``(j % 64) * (B + 1) + j // 64``; a trailing partial tile is left
    in sequential order.
    """
    perm = np.arange(count, dtype=np.int64)
    if Layout(layout) == Layout.SEQUENTIAL_BLOCK:
        return perm
    depth = num_planes(B)
    tile = WORD_BITS * depth
    full = count // tile
    if full:
        j = np.arange(tile, dtype=np.int64)
        local = (j % WORD_BITS) * depth + j // WORD_BITS
        perm[: full * tile] = (np.arange(full, dtype=np.int64)[:, None] * tile + local).ravel()
    return perm


@dataclass
class BitplaneSet:
    B: int
    count: int
    layout: Layout
    planes: list  # bytes, MSB plane first

    def payload(self) -> bytes:
        return b"".join(self.planes)


def _pack(bits: np.ndarray, count: int) -> bytes:
    padded = np.zeros(plane_nbytes(count) * 8, dtype=np.uint8)
    padded[:count] = bits
    return np.packbits(padded, bitorder="little").tobytes()


def encode(block: FixedPointBlock, layout=Layout.SEQUENTIAL_BLOCK) -> BitplaneSet:
    layout = Layout(layout)
    P = num_planes(block.B)
    n = to_negabinary(block.q, block.B)
    stored = n[layout_permutation(block.count, block.B, layout)]
    planes = []
    for p in range(P):
        shift = P - 1 - p
        if stored.dtype == object:
            bits = np.array([(int(x) >> shift) & 1 for x in stored], dtype=np.uint8)
        else:
            bits = ((stored >> np.uint64(shift)) & np.uint64(1)).astype(np.uint8)
        planes.append(_pack(bits, block.count))
    return BitplaneSet(block.B, block.count, layout, planes)


def decode_bound(e: int, B: int, k: int) -> float:
    """Guaranteed L-inf error after decoding the ``k`` most significant planes."""
    lsb = math.ldexp(1.0, e - B)
    if k >= num_planes(B):
        return lsb  # exact fixed point: only the truncation remains
    bound = math.ldexp(lsb, num_planes(B) - k) + lsb
    if B > 52 and 0 < k < num_planes(B):
        # partial integers may carry more than 53 significant bits
        bound += math.ldexp(1.0, e + 1 - 53)
    return bound


def decode_integers(planes, B: int, count: int, layout) -> np.ndarray:
    """Fixed-point integers from a prefix of planes; missing low digits read as 0."""
    P = num_planes(B)
    k = len(planes)
    if k > P:
        raise BadBitplaneCount(f"{k} planes given, at most {P} exist")
    nbytes = plane_nbytes(count)
    wide = _wide(B)
    acc = np.zeros(count, dtype=object if wide else np.uint64)
    for p, plane in enumerate(planes):
        if len(plane) != nbytes:
            raise ShortInput(f"plane {p}: expected {nbytes} bytes, got {len(plane)}")
        bits = np.unpackbits(np.frombuffer(plane, dtype=np.uint8), bitorder="little")[:count]
        shift = P - 1 - p
        if wide:
            acc = acc + np.array([int(b) << shift for b in bits], dtype=object)
        else:
            acc |= bits.astype(np.uint64) << np.uint64(shift)
    n = np.empty_like(acc)
    n[layout_permutation(count, B, layout)] = acc
    return from_negabinary(n, B)


def decode(planes, e: int, B: int, count: int, layout=Layout.SEQUENTIAL_BLOCK):
    """Reconstruct values from the first ``len(planes)`` planes.

    Returns ``(values, bound)`` with ``|v - v_hat| <= bound`` elementwise.
    """
    q = decode_integers(planes, B, count, layout)
    return fixed_to_float(q, e, B), decode_bound(e, B, len(planes))


def bitplanes_needed(e: int, B: int, tol: float) -> int:
    """Fewest planes whose decode bound is within ``tol`` (all planes if none is)."""
    P = num_planes(B)
    for k in range(P + 1):
        if decode_bound(e, B, k) <= tol:
            return k
    return P

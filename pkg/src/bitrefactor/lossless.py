"""Hybrid lossless coding of merged bitplane groups.

Three codecs (canonical Huffman, byte RLE, direct copy) and two cheap
compression-ratio estimators used to pick one per group of ``m`` planes.
"""
from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

import numpy as np

from .errors import CorruptPayload, EmptyInput, UnknownMethodTag


class Method(IntEnum):
    HUFFMAN = 0
    RLE = 1
    DIRECT_COPY = 2


HUFFMAN_OVERHEAD = 256 + 8  # code-length table + original length
RLE_MAX_RUN = 255
_SEG_HEADER = struct.Struct("<BQQ")


@dataclass(frozen=True)
class Segment:
    method: Method
    raw_size: int
    comp_size: int
    payload: bytes

    def to_bytes(self) -> bytes:
        return _SEG_HEADER.pack(int(self.method), self.raw_size, self.comp_size) + self.payload

    @classmethod
    def from_bytes(cls, buf: bytes, offset: int = 0):
        """Parse one segment; returns ``(segment, next_offset)``."""
        if len(buf) - offset < _SEG_HEADER.size:
            raise CorruptPayload("truncated segment header")
        tag, raw, comp = _SEG_HEADER.unpack_from(buf, offset)
        try:
            method = Method(tag)
        except ValueError:
            raise UnknownMethodTag(f"unknown method tag {tag}") from None
        start = offset + _SEG_HEADER.size
        if len(buf) - start < comp:
            raise CorruptPayload("truncated segment payload")
        return cls(method, raw, comp, bytes(buf[start:start + comp])), start + comp


PLACEHOLDER = Segment(Method.DIRECT_COPY, 0, 0, b"")


@dataclass(frozen=True)
class GroupingPolicy:
    m: int = 4
    T_s: int = 1024
    T_cr: float = 1.0
    only: Optional[Method] = None  # force one codec for every group (baselines)

    def __post_init__(self):
        if self.m < 1 or self.T_s < 0 or not self.T_cr > 0:
            raise ValueError(f"invalid grouping policy {self}")


def _as_u8(data) -> np.ndarray:
    return np.frombuffer(bytes(data), dtype=np.uint8)


# ---- estimators ----

def huffman_cost_bits(data) -> int:
    """Total code bits of an optimal prefix code for the byte histogram."""
    a = _as_u8(data)
    if a.size == 0:
        raise EmptyInput("cannot estimate an empty group")
    freq = np.bincount(a, minlength=256)
    weights = [int(f) for f in freq if f]
    if len(weights) == 1:
        return weights[0]
    # cost of an optimal code equals the sum of all merged weights
    heapq.heapify(weights)
    cost = 0
    while len(weights) > 1:
        w = heapq.heappop(weights) + heapq.heappop(weights)
        cost += w
        heapq.heappush(weights, w)
    return cost


def estimate_cr_huffman(data) -> float:
    a = _as_u8(data)
    return 8.0 * a.size / huffman_cost_bits(a)


def count_runs(data) -> int:
    a = _as_u8(data)
    if a.size == 0:
        raise EmptyInput("cannot estimate an empty group")
    starts = np.flatnonzero(np.concatenate(([True], a[1:] != a[:-1])))
    lengths = np.diff(np.append(starts, a.size))
    return int(np.sum(-(-lengths // RLE_MAX_RUN)))


def estimate_cr_rle(data) -> float:
    a = _as_u8(data)
    return 8.0 * a.size / (16.0 * count_runs(a))


# ---- Huffman codec ----

def huffman_code_lengths(freq) -> np.ndarray:
    lengths = np.zeros(256, dtype=np.int64)
    present = [s for s in range(256) if freq[s]]
    if len(present) == 1:
        lengths[present[0]] = 1
        return lengths
    # (weight, tiebreak, symbols under this node)
    heap = [(int(freq[s]), s, [s]) for s in present]
    heapq.heapify(heap)
    tiebreak = 256
    while len(heap) > 1:
        w1, _, s1 = heapq.heappop(heap)
        w2, _, s2 = heapq.heappop(heap)
        for s in s1:
            lengths[s] += 1
        for s in s2:
            lengths[s] += 1
        heapq.heappush(heap, (w1 + w2, tiebreak, s1 + s2))
        tiebreak += 1
    return lengths


def canonical_codes(lengths) -> np.ndarray:
    codes = np.zeros(256, dtype=np.uint64)
    code = 0
    prev_len = 0
    for length, sym in sorted((int(l), s) for s, l in enumerate(lengths) if l):
        code <<= length - prev_len
        codes[sym] = code
        code += 1
        prev_len = length
    return codes


def huffman_encode(data) -> Segment:
    a = _as_u8(data)
    if a.size == 0:
        raise EmptyInput("cannot Huffman-encode an empty group")
    lengths = huffman_code_lengths(np.bincount(a, minlength=256))
    if lengths.max() > 64:
        raise ValueError("code length above 64 bits")
    codes = canonical_codes(lengths)

    el = lengths[a]
    total = int(el.sum())
    ends = np.cumsum(el)
    starts = ends - el
    owner = np.repeat(np.arange(a.size), el)
    pos = np.arange(total, dtype=np.int64) - starts[owner]
    shift = (el[owner] - 1 - pos).astype(np.uint64)
    bits = ((codes[a[owner]] >> shift) & np.uint64(1)).astype(np.uint8)
    body = np.packbits(bits, bitorder="big").tobytes()

    payload = lengths.astype(np.uint8).tobytes() + struct.pack("<Q", a.size) + body
    return Segment(Method.HUFFMAN, a.size, len(payload), payload)


def huffman_payload_bits(seg: Segment) -> int:
    """Code bits in a Huffman payload, excluding table and length fields."""
    lengths = np.frombuffer(seg.payload[:256], dtype=np.uint8).astype(np.int64)
    n = struct.unpack_from("<Q", seg.payload, 256)[0]
    return _huffman_walk(lengths, seg.payload[HUFFMAN_OVERHEAD:], n)[1]


def _huffman_walk(lengths, body, n):
    """Decode ``n`` symbols; returns ``(symbols, bits_consumed)``."""
    if n == 0:
        return np.zeros(0, dtype=np.uint8), 0
    maxlen = int(lengths.max())
    if maxlen == 0:
        raise CorruptPayload("empty Huffman table")
    codes = canonical_codes(lengths)
    # Kraft check: canonical assignment must not overflow
    if sum(2.0 ** -int(l) for l in lengths if l) > 1.0 + 1e-12:
        raise CorruptPayload("code lengths violate the Kraft inequality")
    bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8), bitorder="big")
    T = bits.size

    if maxlen <= 24:
        # lookup table indexed by the next maxlen bits
        lut_sym = np.zeros(1 << maxlen, dtype=np.int64)
        lut_len = np.zeros(1 << maxlen, dtype=np.int64)
        for s in range(256):
            l = int(lengths[s])
            if l:
                lo = int(codes[s]) << (maxlen - l)
                lut_sym[lo:lo + (1 << (maxlen - l))] = s
                lut_len[lo:lo + (1 << (maxlen - l))] = l
        padded = np.concatenate([bits, np.zeros(maxlen, dtype=np.uint8)]).astype(np.int64)
        window = np.zeros(T, dtype=np.int64)
        for i in range(maxlen):
            window = (window << 1) | padded[i:i + T]
        sym_at = lut_sym[window].tolist()
        len_at = lut_len[window].tolist()
        out = bytearray(n)
        pos = 0
        try:
            for i in range(n):
                l = len_at[pos]
                if l == 0:
                    raise CorruptPayload("invalid Huffman code")
                out[i] = sym_at[pos]
                pos += l
        except IndexError:
            raise CorruptPayload("Huffman payload too short") from None
        if pos > T:
            raise CorruptPayload("Huffman payload too short")
        return np.frombuffer(bytes(out), dtype=np.uint8), pos

    table = {(int(lengths[s]), int(codes[s])): s for s in range(256) if lengths[s]}
    out = bytearray(n)
    pos = 0
    bl = bits.tolist()
    for i in range(n):
        code = 0
        l = 0
        while True:
            if pos >= T or l >= maxlen:
                raise CorruptPayload("invalid or truncated Huffman code")
            code = (code << 1) | bl[pos]
            pos += 1
            l += 1
            s = table.get((l, code))
            if s is not None:
                out[i] = s
                break
    return np.frombuffer(bytes(out), dtype=np.uint8), pos


def huffman_decode(seg: Segment) -> bytes:
    p = seg.payload
    if len(p) < HUFFMAN_OVERHEAD:
        raise CorruptPayload("Huffman payload shorter than its table")
    lengths = np.frombuffer(p[:256], dtype=np.uint8).astype(np.int64)
    n = struct.unpack_from("<Q", p, 256)[0]
    if n != seg.raw_size:
        raise CorruptPayload(f"length field {n} disagrees with raw_size {seg.raw_size}")
    symbols, used = _huffman_walk(lengths, p[HUFFMAN_OVERHEAD:], n)
    if -(-used // 8) != len(p) - HUFFMAN_OVERHEAD:
        raise CorruptPayload("trailing bytes after Huffman body")
    return symbols.tobytes()


# ---- RLE codec ----

def rle_encode(data) -> Segment:
    a = _as_u8(data)
    if a.size == 0:
        return Segment(Method.RLE, 0, 0, b"")
    starts = np.flatnonzero(np.concatenate(([True], a[1:] != a[:-1])))
    lengths = np.diff(np.append(starts, a.size))
    pieces = -(-lengths // RLE_MAX_RUN)
    symbols = np.repeat(a[starts], pieces)
    counts = np.full(int(pieces.sum()), RLE_MAX_RUN, dtype=np.int64)
    last = np.cumsum(pieces) - 1
    counts[last] = lengths - (pieces - 1) * RLE_MAX_RUN
    payload = np.stack([symbols, counts.astype(np.uint8)], axis=1).tobytes()
    return Segment(Method.RLE, a.size, len(payload), payload)


def rle_decode(seg: Segment) -> bytes:
    p = np.frombuffer(seg.payload, dtype=np.uint8)
    if p.size % 2:
        raise CorruptPayload("RLE payload has odd length")
    pairs = p.reshape(-1, 2)
    if np.any(pairs[:, 1] == 0):
        raise CorruptPayload("RLE run of length zero")
    out = np.repeat(pairs[:, 0], pairs[:, 1].astype(np.int64))
    if out.size != seg.raw_size:
        raise CorruptPayload(f"RLE expands to {out.size} bytes, expected {seg.raw_size}")
    return out.tobytes()


def direct_copy(data) -> Segment:
    b = bytes(data)
    return Segment(Method.DIRECT_COPY, len(b), len(b), b)


def decode_segment(seg: Segment) -> bytes:
    if seg.method == Method.HUFFMAN:
        return huffman_decode(seg)
    if seg.method == Method.RLE:
        return rle_decode(seg)
    if seg.method == Method.DIRECT_COPY:
        if len(seg.payload) != seg.raw_size:
            raise CorruptPayload("direct-copy payload size mismatch")
        return bytes(seg.payload)
    raise UnknownMethodTag(f"unknown method tag {seg.method}")


_ENCODERS = {Method.HUFFMAN: huffman_encode, Method.RLE: rle_encode, Method.DIRECT_COPY: direct_copy}


def select_method(group: bytes, policy: GroupingPolicy) -> Method:
    if policy.only is not None:
        return Method(policy.only)
    if len(group) <= policy.T_s:
        return Method.DIRECT_COPY
    if estimate_cr_huffman(group) > policy.T_cr:
        return Method.HUFFMAN
    if estimate_cr_rle(group) > policy.T_cr:
        return Method.RLE
    return Method.DIRECT_COPY


def compress_group(group: bytes, policy: GroupingPolicy) -> Segment:
    if not group:
        return direct_copy(b"")
    seg = _ENCODERS[select_method(group, policy)](group)
    if policy.only is None and seg.comp_size > len(group):
        # the estimate ignores the code table, so a near-flat histogram can expand
        return direct_copy(group)
    return seg


def hybrid_compress(planes, policy: GroupingPolicy = GroupingPolicy()) -> list:
    """One segment per plane: the leading plane of each group of ``m`` carries
    the compressed group, the rest are zero-length placeholders."""
    plane_list = planes.planes if hasattr(planes, "planes") else list(planes)
    out = []
    for i in range(0, len(plane_list), policy.m):
        group = b"".join(plane_list[i:i + policy.m])
        out.append(compress_group(group, policy))
        out.extend([PLACEHOLDER] * (min(policy.m, len(plane_list) - i) - 1))
    return out


def group_segments(segments, m: int) -> list:
    """Drop the placeholder slots, keeping the group-carrying segments."""
    return list(segments[::m])


def hybrid_decompress(segments, policy: GroupingPolicy, plane_nbytes: int, total_planes: int) -> list:
    """Decode a prefix of group segments back into planes.

    ``segments`` holds one entry per group. The result has
    ``min(len(segments) * m, total_planes)`` planes.
    """
    planes = []
    for g, seg in enumerate(segments):
        n_in_group = min(policy.m, total_planes - g * policy.m)
        if n_in_group <= 0:
            raise CorruptPayload("more groups than planes")
        raw = decode_segment(seg)
        if len(raw) != n_in_group * plane_nbytes:
            raise CorruptPayload(f"group {g}: {len(raw)} bytes, expected {n_in_group * plane_nbytes}")
        planes.extend(raw[i * plane_nbytes:(i + 1) * plane_nbytes] for i in range(n_in_group))
    return planes

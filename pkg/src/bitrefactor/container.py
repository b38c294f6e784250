"""Refactored stream format and incremental retrieval.

Layout (all integers little-endian)::

    magic "HPMDR1" | version u16 | dtype u8 | ndims u8 | dims u64 * ndims
    | decomposer u8 | layout u8 | B u8 | m u8 | level_count u32
    per level: e i16 | count u64 | groups * (method u8, raw u64, comp u64, offset u64)
    payloads, level-major, most significant group first

A level with ``count > 0`` has ``ceil((B + 1) / m)`` groups, otherwise none.
Offsets are absolute positions in the stream.
"""
from __future__ import annotations

import io
import math
import os
import struct
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import bitplane, decomposer
from .bitplane import Layout
from .decomposer import Decomposer
from .errors import CorruptPayload, ShapeMismatch, UnknownMethodTag
from .lossless import GroupingPolicy, Method, Segment, group_segments, hybrid_compress, hybrid_decompress

MAGIC = b"HPMDR1"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
DTYPE_IDS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
DEFAULT_B = {0: 32, 1: 52}

_GROUP = struct.Struct("<BQQQ")
_LEVEL = struct.Struct("<hQ")


@dataclass(frozen=True)
class GroupEntry:
    method: Method
    raw_size: int
    comp_size: int
    offset: int


@dataclass(frozen=True)
class LevelMeta:
    e: int
    count: int
    groups: tuple = ()


@dataclass(frozen=True)
class StreamMeta:
    dtype: int
    dims: tuple
    decomposer: Decomposer
    layout: Layout
    B: int
    m: int
    levels: tuple

    @property
    def num_planes(self) -> int:
        return bitplane.num_planes(self.B)

    @property
    def groups_per_level(self) -> int:
        return -(-self.num_planes // self.m)

    def level_groups(self, j: int) -> int:
        return self.groups_per_level if self.levels[j].count else 0

    @property
    def payload_size(self) -> int:
        return sum(g.comp_size for lv in self.levels for g in lv.groups)

    @property
    def num_elements(self) -> int:
        return int(np.prod(self.dims))


def rounding_slack(meta: StreamMeta) -> float:
    """Allowance for floating-point error of the recomposition arithmetic."""
    if meta.decomposer == Decomposer.IDENTITY:
        return 0.0
    mag = sum(math.ldexp(1.0, lv.e + 2) for lv in meta.levels if lv.count)
    return decomposer.roundoff_allowance(len(meta.dims), len(meta.levels), mag)


# ---- byte-range sources ----

class MemorySource:
    def __init__(self, data: bytes):
        self._data = bytes(data)

    @property
    def size(self) -> int:
        return len(self._data)

    def read(self, offset: int, size: int) -> bytes:
        if offset < 0 or offset + size > len(self._data):
            raise CorruptPayload(f"read of {size} bytes at {offset} past end of stream")
        return self._data[offset:offset + size]


class FileSource:
    def __init__(self, path):
        self.path = os.fspath(path)
        self._fh = open(self.path, "rb")
        self.size = os.fstat(self._fh.fileno()).st_size

    def read(self, offset: int, size: int) -> bytes:
        self._fh.seek(offset)
        buf = self._fh.read(size)
        if len(buf) != size:
            raise CorruptPayload(f"short read at {offset}: wanted {size}, got {len(buf)}")
        return buf

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class CountingSource:
    """Wraps another source and records every byte range requested."""

    def __init__(self, inner):
        self.inner = inner
        self.reads = []

    @property
    def size(self) -> int:
        return self.inner.size

    @property
    def bytes_read(self) -> int:
        return sum(n for _, n in self.reads)

    def read(self, offset: int, size: int) -> bytes:
        self.reads.append((offset, size))
        return self.inner.read(offset, size)


# ---- writing ----

def header_size(ndims: int, level_groups) -> int:
    return (len(MAGIC) + 2 + 1 + 1 + 8 * ndims + 1 + 1 + 1 + 1 + 4
            + sum(_LEVEL.size + g * _GROUP.size for g in level_groups))


def write_stream(meta: StreamMeta, level_segments, sink=None) -> StreamMeta:
    """Serialize ``level_segments`` (one list of group segments per level).

    ``meta.levels`` supplies ``e`` and ``count``; group tables and offsets are
    filled in here. ``sink`` is a path, a binary file object or None (the
    encoded bytes are then available from :func:`encode_stream`).
    """
    data, full = encode_stream(meta, level_segments)
    if sink is None:
        return full
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "wb") as fh:
            fh.write(data)
    else:
        sink.write(data)
    return full


def encode_stream(meta: StreamMeta, level_segments):
    if len(level_segments) != len(meta.levels):
        raise ShapeMismatch("one segment list per level required")
    for j, segs in enumerate(level_segments):
        if len(segs) != meta.level_groups(j):
            raise ShapeMismatch(f"level {j}: expected {meta.level_groups(j)} groups, got {len(segs)}")
    offset = header_size(len(meta.dims), [len(s) for s in level_segments])
    levels = []
    for lv, segs in zip(meta.levels, level_segments):
        groups = []
        for seg in segs:
            groups.append(GroupEntry(Method(seg.method), seg.raw_size, seg.comp_size, offset))
            offset += seg.comp_size
        levels.append(LevelMeta(lv.e, lv.count, tuple(groups)))
    full = replace(meta, levels=tuple(levels))

    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<HBB", VERSION, full.dtype, len(full.dims)))
    out.write(struct.pack(f"<{len(full.dims)}Q", *full.dims))
    out.write(struct.pack("<BBBBI", int(full.decomposer), int(full.layout), full.B, full.m, len(full.levels)))
    for lv in full.levels:
        out.write(_LEVEL.pack(lv.e, lv.count))
        for g in lv.groups:
            out.write(_GROUP.pack(int(g.method), g.raw_size, g.comp_size, g.offset))
    for segs in level_segments:
        for seg in segs:
            out.write(seg.payload)
    return out.getvalue(), full


def read_meta(source) -> StreamMeta:
    pos = 0

    def take(n):
        nonlocal pos
        buf = source.read(pos, n)
        pos += n
        return buf

    if take(len(MAGIC)) != MAGIC:
        raise CorruptPayload("bad magic")
    version, dtype, ndims = struct.unpack("<HBB", take(4))
    if version != VERSION:
        raise CorruptPayload(f"unsupported version {version}")
    if dtype not in DTYPES:
        raise CorruptPayload(f"unknown dtype id {dtype}")
    dims = struct.unpack(f"<{ndims}Q", take(8 * ndims))
    dec, lay, B, m, nlev = struct.unpack("<BBBBI", take(8))
    try:
        dec, lay = Decomposer(dec), Layout(lay)
    except ValueError as exc:
        raise CorruptPayload(str(exc)) from None
    if not 1 <= B <= 64 or m < 1:
        raise CorruptPayload(f"bad B={B} or m={m}")
    sizes = decomposer.level_sizes(dims, dec)
    if nlev != len(sizes):
        raise CorruptPayload(f"level count {nlev} does not match dims {dims}")
    ngroups = -(-bitplane.num_planes(B) // m)
    levels = []
    for j in range(nlev):
        e, count = _LEVEL.unpack(take(_LEVEL.size))
        if count != sizes[j]:
            raise CorruptPayload(f"level {j}: count {count}, expected {sizes[j]}")
        groups = []
        for _ in range(ngroups if count else 0):
            method, raw, comp, off = _GROUP.unpack(take(_GROUP.size))
            try:
                method = Method(method)
            except ValueError:
                raise UnknownMethodTag(f"unknown method tag {method}") from None
            groups.append(GroupEntry(method, raw, comp, off))
        levels.append(LevelMeta(e, count, tuple(groups)))
    meta = StreamMeta(dtype, tuple(dims), dec, lay, B, m, tuple(levels))
    _check_offsets(meta, pos, getattr(source, "size", None))
    return meta


def _check_offsets(meta, header_end, total):
    expect = header_end
    for lv in meta.levels:
        for g in lv.groups:
            if g.offset != expect:
                raise CorruptPayload(f"segment offset {g.offset}, expected {expect}")
            expect += g.comp_size
    if total is not None and expect > total:
        raise CorruptPayload("stream truncated")


# ---- forward path ----

@dataclass
class EncodedLevels:
    meta: StreamMeta  # group tables still empty
    planes: list  # BitplaneSet per level


def transform(data, B: Optional[int] = None, layout=Layout.INTERLEAVED_TILE,
              mode=Decomposer.HIERARCHICAL) -> EncodedLevels:
    """Decompose, align and bitplane-encode (no lossless stage)."""
    arr = np.asarray(data)
    dtype = DTYPE_IDS.get(arr.dtype, 1)
    if B is None:
        B = DEFAULT_B[dtype]
    dec = decomposer.decompose(arr, mode)
    levels, sets = [], []
    for coeffs in dec.levels:
        block = bitplane.align_fixed_point(coeffs, B)
        levels.append(LevelMeta(block.e if block.count else 0, block.count))
        sets.append(bitplane.encode(block, layout))
    meta = StreamMeta(dtype, tuple(int(n) for n in dec.dims), Decomposer(mode), Layout(layout),
                      B, 0, tuple(levels))
    return EncodedLevels(meta, sets)


def compress_levels(enc: EncodedLevels, policy: GroupingPolicy = GroupingPolicy()):
    """Hybrid-compress every level; returns ``(meta, group segments per level)``."""
    segs = []
    for lv, planes in zip(enc.meta.levels, enc.planes):
        segs.append(group_segments(hybrid_compress(planes, policy), policy.m) if lv.count else [])
    return replace(enc.meta, m=policy.m), segs


def refactor(data, B=None, policy: GroupingPolicy = GroupingPolicy(),
             layout=Layout.INTERLEAVED_TILE, mode=Decomposer.HIERARCHICAL):
    """Full forward path; returns ``(stream bytes, meta)``."""
    meta, segs = compress_levels(transform(data, B, layout, mode), policy)
    return encode_stream(meta, segs)


def refactor_batch(arrays, B=None, policy: GroupingPolicy = GroupingPolicy(),
                   layout=Layout.INTERLEAVED_TILE, mode=Decomposer.HIERARCHICAL,
                   scheduler: str = "pipelined") -> list:
    """Refactor several arrays, one pipeline chunk each.

    Output is identical for both schedulers; only the overlap differs.
    Returns ``[(stream bytes, meta), ...]`` in input order.
    """
    from .pipeline import build_refactor_graph, execute

    arrays = list(arrays)
    if not arrays:
        return []

    def I(k, ctx):
        arr = np.asarray(arrays[k - 1])
        ctx["data"] = np.ascontiguousarray(arr)

    def Z(k, ctx):
        ctx["enc"] = transform(ctx.pop("data"), B, layout, mode)

    def L(k, ctx):
        ctx["segs"] = compress_levels(ctx.pop("enc"), policy)

    def S(k, ctx):
        ctx["out"] = encode_stream(*ctx.pop("segs"))

    trace = execute(build_refactor_graph(len(arrays)), {"I": I, "Z": Z, "L": L, "S": S}, scheduler)
    return [trace.contexts[k]["out"] for k in range(1, len(arrays) + 1)]


# ---- retrieval ----

@dataclass(frozen=True)
class LevelState:
    groups_loaded: int
    planes: tuple
    bound: float
    coeffs: np.ndarray = field(repr=False, compare=False)

    @property
    def planes_decoded(self) -> int:
        return len(self.planes)


@dataclass(frozen=True)
class RetrievalState:
    levels: tuple
    bytes_read: int = 0
    slack: float = 0.0

    @property
    def bound(self) -> float:
        """Guaranteed L-inf error of :func:`reconstruct` for this state."""
        return sum(lv.bound for lv in self.levels) + self.slack


def _level_bound(meta: StreamMeta, j: int, planes: int) -> float:
    lv = meta.levels[j]
    if lv.count == 0:
        return 0.0
    return bitplane.decode_bound(lv.e, meta.B, planes)


def initial_state(meta: StreamMeta) -> RetrievalState:
    levels = tuple(LevelState(0, (), _level_bound(meta, j, 0), np.zeros(lv.count))
                   for j, lv in enumerate(meta.levels))
    return RetrievalState(levels, 0, rounding_slack(meta))


@dataclass(frozen=True)
class FetchPlan:
    groups: tuple  # additional groups per level
    reachable: bool = True

    @property
    def empty(self) -> bool:
        return not any(self.groups)


def level_tolerances(meta: StreamMeta, tau: float) -> list:
    eff = max(tau - rounding_slack(meta), 0.0)
    return decomposer.allocate_level_tolerances(eff, len(meta.levels))


def plan_retrieval(meta: StreamMeta, tau: float, state: Optional[RetrievalState] = None) -> FetchPlan:
    """Additional groups per level so that the state bound drops to ``tau``.

    ``reachable`` is False when full precision still cannot meet ``tau``.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    state = state or initial_state(meta)
    tols = level_tolerances(meta, tau)
    reachable = tau >= rounding_slack(meta)
    extra = []
    for j, (lv, tol) in enumerate(zip(meta.levels, tols)):
        if not lv.count:
            extra.append(0)
            continue
        k = bitplane.bitplanes_needed(lv.e, meta.B, tol)
        if bitplane.decode_bound(lv.e, meta.B, k) > tol:
            reachable = False
        want = min(-(-k // meta.m), meta.level_groups(j))
        extra.append(max(0, want - state.levels[j].groups_loaded))
    return FetchPlan(tuple(extra), reachable)


def augment_plan(meta: StreamMeta, state: RetrievalState) -> FetchPlan:
    """The smallest step: one more group on the open level with the largest
    bound (the coarsest one on ties)."""
    extra = [0] * len(meta.levels)
    j = worst_open_level(meta, state)
    if j is not None:
        extra[j] = 1
    return FetchPlan(tuple(extra))


def worst_open_level(meta: StreamMeta, state: RetrievalState):
    """Index of the open level with the largest bound, or None if exhausted."""
    best = None
    for j, lv in enumerate(state.levels):
        if lv.groups_loaded < meta.level_groups(j) and (best is None or lv.bound > state.levels[best].bound):
            best = j
    return best


def exhausted(meta: StreamMeta, state: RetrievalState) -> bool:
    return all(lv.groups_loaded >= meta.level_groups(j) for j, lv in enumerate(state.levels))


def read_groups(source, meta: StreamMeta, plan: FetchPlan, state: RetrievalState):
    """Read the planned segments; returns ``{level: [Segment, ...]}`` and bytes read."""
    out, nbytes = {}, 0
    for j, extra in enumerate(plan.groups):
        if not extra:
            continue
        start = state.levels[j].groups_loaded
        entries = meta.levels[j].groups[start:start + extra]
        if len(entries) != extra:
            raise ValueError(f"level {j}: plan asks past the last group")
        size = sum(g.comp_size for g in entries)
        buf = source.read(entries[0].offset, size)
        nbytes += size
        segs, pos = [], 0
        for g in entries:
            segs.append(Segment(g.method, g.raw_size, g.comp_size, buf[pos:pos + g.comp_size]))
            pos += g.comp_size
        out[j] = segs
    return out, nbytes


def decompress_groups(meta: StreamMeta, state: RetrievalState, fetched) -> dict:
    """Lossless-decode fetched groups into ``{level: [plane bytes, ...]}``."""
    policy = GroupingPolicy(m=meta.m)
    out = {}
    for j, segs in sorted(fetched.items()):
        first_plane = state.levels[j].groups_loaded * meta.m
        out[j] = hybrid_decompress(segs, policy, bitplane.plane_nbytes(meta.levels[j].count),
                                   meta.num_planes - first_plane)
    return out


def absorb_planes(meta: StreamMeta, state: RetrievalState, new_planes: dict, nbytes: int):
    """Append decoded planes and re-derive coefficients and bounds.

    Returns ``({level: coefficients}, new state)``.
    """
    levels = list(state.levels)
    updates = {}
    for j, planes in sorted(new_planes.items()):
        lv, old = meta.levels[j], state.levels[j]
        all_planes = old.planes + tuple(planes)
        groups = -(-len(all_planes) // meta.m)
        coeffs, bound = bitplane.decode(list(all_planes), lv.e, meta.B, lv.count, meta.layout)
        levels[j] = LevelState(groups, all_planes, bound, coeffs)
        updates[j] = coeffs
    return updates, replace(state, levels=tuple(levels), bytes_read=state.bytes_read + nbytes)


def apply_groups(meta: StreamMeta, state: RetrievalState, fetched, nbytes: int):
    return absorb_planes(meta, state, decompress_groups(meta, state, fetched), nbytes)


def fetch_increment(source, meta: StreamMeta, plan: FetchPlan, state: RetrievalState):
    fetched, nbytes = read_groups(source, meta, plan, state)
    return apply_groups(meta, state, fetched, nbytes)


def reconstruct(meta: StreamMeta, state: RetrievalState):
    """Recompose from the coefficients decoded so far; returns ``(array, bound)``."""
    dec = decomposer.LevelDecomposition(meta.dims, meta.decomposer, [lv.coeffs for lv in state.levels])
    arr, _ = decomposer.recompose(dec, [lv.bound for lv in state.levels])
    return arr, state.bound


@dataclass
class Retrieval:
    data: np.ndarray
    state: RetrievalState
    bound: float
    reachable: bool
    bytes_fetched: int


class Reader:
    """An open stream: metadata plus a byte-range source for its payloads."""

    def __init__(self, source):
        if isinstance(source, (bytes, bytearray, memoryview)):
            source = MemorySource(source)
        elif isinstance(source, (str, os.PathLike)):
            source = FileSource(source)
        self.source = source
        self.meta = read_meta(source)

    def initial_state(self) -> RetrievalState:
        return initial_state(self.meta)

    def plan(self, tau, state=None) -> FetchPlan:
        return plan_retrieval(self.meta, tau, state)

    def fetch(self, plan, state):
        return fetch_increment(self.source, self.meta, plan, state)

    def retrieve(self, tau: float, state: Optional[RetrievalState] = None) -> Retrieval:
        state = state or self.initial_state()
        plan = self.plan(tau, state)
        before = state.bytes_read
        _, state = self.fetch(plan, state)
        arr, bound = reconstruct(self.meta, state)
        return Retrieval(arr, state, bound, plan.reachable and bound <= tau, state.bytes_read - before)

    def close(self):
        if hasattr(self.source, "close"):
            self.source.close()


# ---- persisted retrieval state ----

def save_state(path, state: RetrievalState):
    arrays = {"groups": np.array([lv.groups_loaded for lv in state.levels], dtype=np.int64),
              "bytes_read": np.array([state.bytes_read], dtype=np.int64)}
    for j, lv in enumerate(state.levels):
        arrays[f"planes_{j}"] = np.frombuffer(b"".join(lv.planes), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_state(path, meta: StreamMeta) -> RetrievalState:
    with np.load(path) as z:
        groups = z["groups"].tolist()
        bytes_read = int(z["bytes_read"][0])
        blobs = [z[f"planes_{j}"].tobytes() for j in range(len(groups))]
    if len(groups) != len(meta.levels):
        raise ShapeMismatch("state does not belong to this stream")
    state = initial_state(meta)
    levels = list(state.levels)
    for j, (g, blob) in enumerate(zip(groups, blobs)):
        if not g:
            continue
        lv = meta.levels[j]
        nb = bitplane.plane_nbytes(lv.count)
        planes = tuple(blob[i * nb:(i + 1) * nb] for i in range(len(blob) // nb))
        if len(planes) != min(g * meta.m, meta.num_planes):
            raise ShapeMismatch(f"level {j}: state holds {len(planes)} planes for {g} groups")
        coeffs, bound = bitplane.decode(list(planes), lv.e, meta.B, lv.count, meta.layout)
        levels[j] = LevelState(g, planes, bound, coeffs)
    return replace(state, levels=tuple(levels), bytes_read=bytes_read)

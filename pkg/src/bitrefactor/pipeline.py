"""Chunked task executor with resource-class exclusion.

Tasks belong to one of four classes. Two tasks of the same class never run
at the same time, and a MIXED task runs alone. Chunks flow through a fixed
chain of stages; extra cross-chunk edges let the next chunk's ingress copy
overlap the current chunk's compute without delaying it. At most three
chunks are in flight (three buffer slots).
"""
from __future__ import annotations

import heapq
import queue
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum

from .errors import StageFailure

NUM_SLOTS = 3


class StageClass(IntEnum):
    INGRESS = 0  # host -> device copy
    EGRESS = 1  # device -> host copy
    COMPUTE = 2
    MIXED = 3  # copy and compute, runs alone


REFACTOR_CHAIN = (("I", StageClass.INGRESS), ("Z", StageClass.COMPUTE),
                  ("L", StageClass.MIXED), ("S", StageClass.EGRESS))
RECONSTRUCT_CHAIN = (("X", StageClass.MIXED), ("I", StageClass.INGRESS),
                     ("Z", StageClass.COMPUTE), ("O", StageClass.EGRESS))


@dataclass(frozen=True)
class Task:
    stage: str
    chunk: int
    cls: StageClass
    order: int

    @property
    def id(self) -> str:
        return f"{self.stage}{self.chunk}"

    @property
    def priority(self):
        # wavefront order: stage s of chunk k competes with stage s+1 of
        # chunk k-1; a MIXED task goes first on ties since it must run alone
        return (self.chunk + self.order, self.cls != StageClass.MIXED, self.order)


@dataclass
class PipelineGraph:
    kind: str
    num_chunks: int
    tasks: dict  # id -> Task
    edges: frozenset  # (pred id, succ id)

    def slot(self, chunk: int) -> int:
        return (chunk - 1) % NUM_SLOTS + 1

    def preds(self, tid) -> list:
        return [a for a, b in self.edges if b == tid]

    def topological_order(self) -> list:
        indeg = {t: 0 for t in self.tasks}
        succ = {t: [] for t in self.tasks}
        for a, b in self.edges:
            indeg[b] += 1
            succ[a].append(b)
        heap = [(self.tasks[t].priority, t) for t, d in indeg.items() if d == 0]
        heapq.heapify(heap)
        out = []
        while heap:
            _, t = heapq.heappop(heap)
            out.append(t)
            for s in succ[t]:
                indeg[s] -= 1
                if indeg[s] == 0:
                    heapq.heappush(heap, (self.tasks[s].priority, s))
        if len(out) != len(self.tasks):
            raise ValueError("pipeline graph has a cycle")
        return out

    def is_acyclic(self) -> bool:
        try:
            self.topological_order()
        except ValueError:
            return False
        return True


def _build(kind, chain, num_chunks, cross):
    if num_chunks < 1:
        raise ValueError("num_chunks must be >= 1")
    tasks = {}
    edges = set()
    for k in range(1, num_chunks + 1):
        for order, (stage, cls) in enumerate(chain):
            t = Task(stage, k, cls, order)
            tasks[t.id] = t
            if order:
                edges.add((f"{chain[order - 1][0]}{k}", t.id))
    first, last = chain[0][0], chain[-1][0]
    for k in range(1, num_chunks + 1):
        # buffer slot reuse
        if k + NUM_SLOTS <= num_chunks:
            edges.add((f"{last}{k}", f"{first}{k + NUM_SLOTS}"))
        for a, da, b, db in cross:
            if 1 <= k + da <= num_chunks and 1 <= k + db <= num_chunks:
                edges.add((f"{a}{k + da}", f"{b}{k + db}"))
    return PipelineGraph(kind, num_chunks, tasks, frozenset(edges))


def build_refactor_graph(num_chunks: int) -> PipelineGraph:
    # I(k+1) -> L(k): the prefetch finishes before lossless compression.
    # S(k) -> I(k+2): a prefetch starts only once the preceding
    # serialization has released the copy engine.
    return _build("refactor", REFACTOR_CHAIN, num_chunks,
                  [("I", 1, "L", 0), ("S", 0, "I", 2)])


def build_reconstruct_graph(num_chunks: int) -> PipelineGraph:
    # X(k) -> I(k+1): prefetch waits for the current decompression.
    # X(k) -> O(k-1): write-back of the previous chunk waits for it as well.
    return _build("reconstruct", RECONSTRUCT_CHAIN, num_chunks,
                  [("X", 0, "I", 1), ("X", 0, "O", -1)])


# ---- traces ----

@dataclass(frozen=True)
class TraceRecord:
    task: str
    chunk: int
    cls: StageClass
    start: float
    end: float


@dataclass
class ExecutionTrace:
    records: list = field(default_factory=list)
    contexts: dict = field(default_factory=dict)

    def sorted(self) -> list:
        return sorted(self.records, key=lambda r: (r.start, r.task))

    @property
    def makespan(self) -> float:
        if not self.records:
            return 0.0
        return max(r.end for r in self.records) - min(r.start for r in self.records)

    def to_text(self) -> str:
        lines = ["task,chunk,class,start_ns,end_ns"]
        for r in self.sorted():
            lines.append(f"{r.task},{r.chunk},{r.cls.name.lower()},{int(r.start)},{int(r.end)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExecutionTrace":
        recs = []
        for line in text.strip().splitlines()[1:]:
            task, chunk, klass, s, e = line.split(",")
            recs.append(TraceRecord(task, int(chunk), StageClass[klass.upper()], int(s), int(e)))
        return cls(recs)


def validate_trace(graph: PipelineGraph, trace: ExecutionTrace) -> list:
    """Every exclusion or dependency violation in ``trace``; empty means pass."""
    problems = []
    by_id = {}
    for r in trace.records:
        if r.task in by_id:
            problems.append(f"{r.task} executed more than once")
        by_id[r.task] = r
        if r.end < r.start:
            problems.append(f"{r.task} ends before it starts")
    for tid in graph.tasks:
        if tid not in by_id:
            problems.append(f"{tid} never executed")

    recs = trace.sorted()
    for i, a in enumerate(recs):
        for b in recs[i + 1:]:
            if b.start >= a.end:
                break  # sorted by start, nothing later overlaps a
            if b.end > a.start:
                if a.cls == StageClass.MIXED or b.cls == StageClass.MIXED:
                    problems.append(f"mixed task overlap: {a.task} / {b.task}")
                elif a.cls == b.cls:
                    problems.append(f"{a.cls.name.lower()} overlap: {a.task} / {b.task}")

    for p, s in sorted(graph.edges):
        if p in by_id and s in by_id and by_id[p].end > by_id[s].start:
            problems.append(f"dependency {p} -> {s} inverted")
    return problems


# ---- scheduling ----

class _Dispatch:
    """Readiness and token bookkeeping shared by the simulator and executor."""

    def __init__(self, graph: PipelineGraph, scheduler: str):
        if scheduler not in ("pipelined", "sequential"):
            raise ValueError(f"unknown scheduler {scheduler!r}")
        self.graph = graph
        self.pipelined = scheduler == "pipelined"
        self.npred = {t: 0 for t in graph.tasks}
        self.succ = {t: [] for t in graph.tasks}
        for a, b in graph.edges:
            self.npred[b] += 1
            self.succ[a].append(b)
        self.ready = [(graph.tasks[t].priority, t) for t, n in self.npred.items() if n == 0]
        heapq.heapify(self.ready)
        self.running = {}
        self.done = set()
        graph.topological_order()  # rejects cycles up front

    def _fits(self, cls) -> bool:
        held = set(self.running.values())
        if StageClass.MIXED in held:
            return False
        if cls == StageClass.MIXED:
            return not held
        return cls not in held

    def launch(self) -> list:
        started = []
        if not self.pipelined:
            if not self.running and self.ready:
                _, t = heapq.heappop(self.ready)
                self.running[t] = self.graph.tasks[t].cls
                started.append(t)
            return started
        skipped = []
        while self.ready:
            item = heapq.heappop(self.ready)
            cls = self.graph.tasks[item[1]].cls
            if self._fits(cls):
                self.running[item[1]] = cls
                started.append(item[1])
            else:
                skipped.append(item)
        for item in skipped:
            heapq.heappush(self.ready, item)
        return started

    def complete(self, tid):
        del self.running[tid]
        self.done.add(tid)
        for s in self.succ[tid]:
            self.npred[s] -= 1
            if self.npred[s] == 0:
                heapq.heappush(self.ready, (self.graph.tasks[s].priority, s))

    @property
    def finished(self) -> bool:
        return len(self.done) == len(self.graph.tasks)

    def not_started(self) -> list:
        left = [t for t in self.graph.tasks if t not in self.done and t not in self.running]
        return sorted(left, key=lambda t: (self.graph.tasks[t].chunk, self.graph.tasks[t].order))


def simulate(graph: PipelineGraph, latency, scheduler: str = "pipelined") -> ExecutionTrace:
    """Discrete-event run with ``latency(task) -> duration`` (or a dict keyed by
    stage letter or task id)."""
    if isinstance(latency, dict):
        table = latency
        latency = lambda t: table.get(t.id, table.get(t.stage))  # noqa: E731
    d = _Dispatch(graph, scheduler)
    now = 0.0
    events = []
    trace = ExecutionTrace()
    starts = {}
    while not d.finished:
        for tid in d.launch():
            starts[tid] = now
            heapq.heappush(events, (now + float(latency(graph.tasks[tid])), graph.tasks[tid].priority, tid))
        if not events:
            raise RuntimeError("scheduler stalled")
        now = events[0][0]
        # retire everything ending now before launching again
        while events and events[0][0] == now:
            _, _, tid = heapq.heappop(events)
            t = graph.tasks[tid]
            trace.records.append(TraceRecord(tid, t.chunk, t.cls, starts[tid], now))
            d.complete(tid)
    return trace


def execute(graph: PipelineGraph, stages: dict, scheduler: str = "pipelined", workers: int = 4) -> ExecutionTrace:
    """Run ``stages[stage letter](chunk, ctx)`` for every task on worker threads.

    ``ctx`` is a per-chunk dict handed to each stage of that chunk; the final
    contexts are returned on the trace. A raising stage stops all further
    launches; in-flight tasks finish and :class:`StageFailure` is raised.
    """
    missing = {t.stage for t in graph.tasks.values()} - set(stages)
    if missing:
        raise ValueError(f"no implementation for stages {sorted(missing)}")
    d = _Dispatch(graph, scheduler)
    trace = ExecutionTrace(contexts={k: {} for k in range(1, graph.num_chunks + 1)})
    done_q = queue.Queue()
    t0 = time.monotonic_ns()

    def run(tid):
        t = graph.tasks[tid]
        start = time.monotonic_ns() - t0
        try:
            stages[t.stage](t.chunk, trace.contexts[t.chunk])
            err = None
        except BaseException as exc:  # re-raised on the dispatcher thread
            err = exc
        done_q.put((tid, start, time.monotonic_ns() - t0, err))

    failure = None
    with ThreadPoolExecutor(max_workers=workers) as pool:
        while not d.finished:
            if failure is None:
                for tid in d.launch():
                    pool.submit(run, tid)
            if not d.running:
                break
            tid, start, end, err = done_q.get()
            t = graph.tasks[tid]
            trace.records.append(TraceRecord(tid, t.chunk, t.cls, start, end))
            d.complete(tid)
            if err is not None and failure is None:
                failure = (tid, err)
    if failure is not None:
        raise StageFailure(failure[0], failure[1], trace, d.not_started())
    return trace

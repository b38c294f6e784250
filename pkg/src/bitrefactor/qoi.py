"""Progressive multi-variable retrieval under a tolerance on a derived quantity.

The quantity is ``Q(v) = sum_c v_c**2`` evaluated pointwise. Each round
fetches more bitplane groups for every variable, recomposes, bounds the
error of ``Q`` from the per-variable L-inf bounds and stops once that bound
is within the tolerance. The stop test uses only the estimate, never the
original data.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from . import container
from .errors import ShapeMismatch, UnreachableTolerance
from .pipeline import build_reconstruct_graph, execute

MAX_HALVINGS = 2000


class Strategy(str, Enum):
    CP = "cp"  # decay the bounds at the worst point until it passes
    MA = "ma"  # one more group per variable, on its worst level
    MAPE = "mape"  # proportional jump while far away, then MA


@dataclass(frozen=True)
class QoiSpec:
    n_vars: int
    family: str = "sum_of_squares"

    def __post_init__(self):
        if self.n_vars < 1:
            raise ValueError("need at least one variable")
        if self.family != "sum_of_squares":
            raise ValueError(f"unsupported QoI family {self.family!r}")

    def evaluate(self, arrays) -> np.ndarray:
        return sum(np.asarray(a, dtype=np.float64) ** 2 for a in arrays)


VTOTAL = QoiSpec(3)


def _check(recons, eps):
    if len(recons) != len(eps):
        raise ShapeMismatch("one error bound per variable required")
    shape = np.shape(recons[0])
    for r in recons:
        if np.shape(r) != shape:
            raise ShapeMismatch("all variables must share one shape")


def pointwise_qoi_bound(recons, eps) -> np.ndarray:
    """``sum_c 2|v_c| eps_c + eps_c**2`` at every point.

    For ``x**2`` on ``[v - eps, v + eps]`` the largest deviation from ``v**2``
    is exactly ``2|v| eps + eps**2``.
    """
    _check(recons, eps)
    out = np.zeros(np.shape(recons[0]))
    for v, e in zip(recons, eps):
        e = float(e)
        if e < 0:
            raise ValueError("error bounds must be non-negative")
        out += 2.0 * np.abs(v) * e + e * e
    return out


def estimate_qoi_error(recons, eps, spec: Optional[QoiSpec] = None) -> float:
    if spec is not None and len(recons) != spec.n_vars:
        raise ShapeMismatch(f"expected {spec.n_vars} variables")
    b = pointwise_qoi_bound(recons, eps)
    return float(b.max()) if b.size else 0.0


@dataclass(frozen=True)
class NextStep:
    """Either per-variable bound targets or, when ``targets`` is None, one
    minimal augmentation step."""
    targets: Optional[tuple] = None

    @property
    def augment(self) -> bool:
        return self.targets is None


def cp_targets(recons, eps, tau: float) -> tuple:
    bound = pointwise_qoi_bound(recons, eps)
    idx = np.unravel_index(int(np.argmax(bound)), bound.shape)
    point = [abs(float(np.asarray(v)[idx])) for v in recons]
    e = [float(x) for x in eps]
    for _ in range(MAX_HALVINGS):
        if sum(2 * p * x + x * x for p, x in zip(point, e)) <= tau:
            break
        e = [x / 2 for x in e]
    return tuple(e)


def estimate_next_eb(recons, eps, tau: float, tau_prime: float, strategy, mape_c: float = 10.0) -> NextStep:
    strategy = Strategy(strategy)
    if strategy == Strategy.CP:
        return NextStep(cp_targets(recons, eps, tau))
    if strategy == Strategy.MA:
        return NextStep()
    p = tau_prime / tau
    if p > mape_c:
        return NextStep(tuple(float(e) / p for e in eps))
    return NextStep()


@dataclass
class QoiResult:
    arrays: list
    states: list
    iterations: int
    bytes_fetched: int
    bitrate: float
    est_err: float
    history: list = field(default_factory=list)  # (est_err, cumulative bytes) per round


def _fetch_round(readers, states, recons, plans, scheduler):
    """Fetch for every variable and recompose, overlapped by the pipeline."""
    n = len(readers)

    def X(k, ctx):
        r, st = readers[k - 1], states[k - 1]
        fetched, nbytes = container.read_groups(r.source, r.meta, plans[k - 1], st)
        ctx["planes"] = container.decompress_groups(r.meta, st, fetched)
        ctx["nbytes"] = nbytes

    def I(k, ctx):
        ctx["staged"] = ctx.pop("planes")

    def Z(k, ctx):
        r = readers[k - 1]
        _, st = container.absorb_planes(r.meta, states[k - 1], ctx.pop("staged"), ctx["nbytes"])
        ctx["state"] = st
        ctx["recon"] = container.reconstruct(r.meta, st)[0] if not plans[k - 1].empty else recons[k - 1]

    def O(k, ctx):
        states[k - 1] = ctx["state"]
        recons[k - 1] = ctx["recon"]

    execute(build_reconstruct_graph(n), {"X": X, "I": I, "Z": Z, "O": O}, scheduler)


def default_initial_eps(readers, tau: float, spec: QoiSpec) -> list:
    """Starting bounds: ``tau / max Q`` times each variable's range, loosened
    by one group (``2**m``) so the strategies still have work to do.

    Magnitudes come from the level exponents in the headers, so nothing is
    fetched to compute them.
    """
    mags = [2.0 ** max((lv.e for lv in r.meta.levels if lv.count), default=0) for r in readers]
    qmax = float(spec.evaluate([np.array([m]) for m in mags])[0])
    return [2.0 ** r.meta.m * tau / qmax * 2.0 * m for r, m in zip(readers, mags)]


def progressive_qoi_retrieve(readers, tau: float, spec: Optional[QoiSpec] = None, strategy="mape",
                             mape_c: float = 10.0, initial_eps="auto", scheduler: str = "pipelined") -> QoiResult:
    """Fetch just enough of every stream that the QoI error bound is <= ``tau``.

    ``initial_eps="auto"`` picks :func:`default_initial_eps`; ``None`` starts
    from zero planes. Raises
    :class:`UnreachableTolerance` (carrying the best result) when every group
    has been fetched and the bound still exceeds ``tau``.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    readers = list(readers)
    spec = spec or QoiSpec(len(readers))
    if spec.n_vars != len(readers):
        raise ShapeMismatch(f"QoI expects {spec.n_vars} variables, got {len(readers)}")
    dims = readers[0].meta.dims
    if any(r.meta.dims != dims for r in readers):
        raise ShapeMismatch("all streams must share one shape")

    states = [r.initial_state() for r in readers]
    recons = [np.zeros(dims) for _ in readers]
    if isinstance(initial_eps, str) and initial_eps == "auto":
        initial_eps = default_initial_eps(readers, tau, spec)
    if initial_eps is not None:
        plans = [container.plan_retrieval(r.meta, float(e), s) for r, e, s in zip(readers, initial_eps, states)]
        _fetch_round(readers, states, recons, plans, scheduler)

    def summary():
        return [s.bound for s in states], sum(s.bytes_read for s in states)

    eps, nbytes = summary()
    tau_prime = estimate_qoi_error(recons, eps, spec)
    history = [(tau_prime, nbytes)]
    iterations = 0
    while tau_prime > tau:
        if all(container.exhausted(r.meta, s) for r, s in zip(readers, states)):
            raise UnreachableTolerance(tau, tau_prime, _result(readers, states, recons, iterations, tau_prime, history))
        step = estimate_next_eb(recons, eps, tau, tau_prime, strategy, mape_c)
        if step.augment:
            plans = [container.augment_plan(r.meta, s) for r, s in zip(readers, states)]
        else:
            plans = [container.plan_retrieval(r.meta, t, s) for r, t, s in zip(readers, step.targets, states)]
            if all(p.empty for p in plans):
                # targets fell inside the current groups: force a minimal step
                plans = [container.augment_plan(r.meta, s) for r, s in zip(readers, states)]
        _fetch_round(readers, states, recons, plans, scheduler)
        iterations += 1
        eps, nbytes = summary()
        tau_prime = estimate_qoi_error(recons, eps, spec)
        history.append((tau_prime, nbytes))
    return _result(readers, states, recons, iterations, tau_prime, history)


def _result(readers, states, recons, iterations, tau_prime, history):
    nbytes = sum(s.bytes_read for s in states)
    elements = sum(r.meta.num_elements for r in readers)
    return QoiResult(list(recons), list(states), iterations, nbytes, 8.0 * nbytes / elements,
                     tau_prime, list(history))


def real_qoi_error(truth, recons, spec: Optional[QoiSpec] = None) -> float:
    spec = spec or QoiSpec(len(truth))
    return float(np.max(np.abs(spec.evaluate(truth) - spec.evaluate(recons))))

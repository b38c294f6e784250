"""Slow, obviously-correct reference implementations used by the tests.

Nothing here imports bitrefactor; each oracle recomputes its answer from
first principles (scalar loops, exact rationals, explicit trees).
"""
import heapq
import itertools
import math
from fractions import Fraction

import numpy as np


# ---- decomposition ----

def refinements(dims):
    n = max(dims)
    return 0 if n < 2 else math.ceil(math.log2(n - 1))


def _predict(x, idx, h):
    """Multilinear prediction of node ``idx`` from the stride-2h grid."""
    choices = []
    for i, n in zip(idx, x.shape):
        if i % (2 * h) == 0:
            choices.append([(i, 1.0)])
        elif i + h < n:
            choices.append([(i - h, 0.5), (i + h, 0.5)])
        else:
            choices.append([(i - h, 1.0)])  # no right neighbour: copy left
    total = 0.0
    for combo in itertools.product(*choices):
        w = 1.0
        for _, wi in combo:
            w *= wi
        total += w * x[tuple(p for p, _ in combo)]
    return total


def scalar_decompose(x):
    """Per-level ``{flat index: coefficient}`` using scalar loops."""
    x = np.asarray(x, dtype=np.float64)
    L = refinements(x.shape)
    levels = []
    for j in range(L + 1):
        h = 1 << (L - j)
        out = {}
        for idx in itertools.product(*[range(0, n, h) for n in x.shape]):
            on_coarse = j > 0 and all(i % (2 * h) == 0 for i in idx)
            if on_coarse:
                continue
            flat = int(np.ravel_multi_index(idx, x.shape))
            out[flat] = x[idx] if j == 0 else x[idx] - _predict(x, idx, h)
        levels.append(out)
    return levels


# ---- fixed point / negabinary ----

def exact_exponent(values):
    """Smallest e with max|v| < 2**e (0 for an all-zero input)."""
    m = max((abs(Fraction(float(v))) for v in values), default=Fraction(0))
    if m == 0:
        return 0
    e = 0
    while m >= Fraction(2) ** e:
        e += 1
    while m < Fraction(2) ** (e - 1):
        e -= 1
    return e


def trunc_fixed(values, e, B):
    return [int(Fraction(float(v)) * Fraction(2) ** (B - e)) for v in values]  # int() truncates toward 0


def negabinary_digits(q):
    """Base -2 digits of ``q``, least significant first."""
    digits = []
    while q != 0:
        q, r = divmod(q, -2)
        if r < 0:
            q, r = q + 1, r + 2
        digits.append(r)
    return digits


def negabinary_value(q):
    return sum(d << i for i, d in enumerate(negabinary_digits(q)))


def negabinary_fits(q, ndigits):
    return len(negabinary_digits(q)) <= ndigits


def truncated_negabinary(q, ndigits, k):
    """Value of ``q`` keeping only its ``k`` most significant of ``ndigits`` digits."""
    d = negabinary_digits(q)
    d += [0] * (ndigits - len(d))
    return sum(di * (-2) ** i for i, di in enumerate(d) if i >= ndigits - k)


# ---- lossless ----

def huffman_lengths_tree(data):
    """Code length per symbol from an explicit Huffman tree."""
    freq = {}
    for b in data:
        freq[b] = freq.get(b, 0) + 1
    if len(freq) == 1:
        return {next(iter(freq)): 1}, freq
    heap = [(f, i, ("leaf", s)) for i, (s, f) in enumerate(sorted(freq.items()))]
    heapq.heapify(heap)
    uid = len(heap)
    while len(heap) > 1:
        f1, _, a = heapq.heappop(heap)
        f2, _, b = heapq.heappop(heap)
        heapq.heappush(heap, (f1 + f2, uid, ("node", a, b)))
        uid += 1
    lengths = {}
    stack = [(heap[0][2], 0)]
    while stack:
        node, depth = stack.pop()
        if node[0] == "leaf":
            lengths[node[1]] = depth
        else:
            stack.append((node[1], depth + 1))
            stack.append((node[2], depth + 1))
    return lengths, freq


def huffman_total_bits(data):
    lengths, freq = huffman_lengths_tree(data)
    return sum(freq[s] * lengths[s] for s in freq)


def rle_runs(data, cap=255):
    runs = 0
    i = 0
    n = len(data)
    while i < n:
        j = i
        while j < n and data[j] == data[i] and j - i < cap:
            j += 1
        runs += 1
        i = j
    return runs


# ---- scheduling ----

def unit_schedule(tasks, edges, priority, classes, pipelined=True):
    """Integer-time list schedule with unit latencies.

    ``classes[t]`` is 'in', 'out', 'compute' or 'mixed'. Each step starts,
    in priority order, every ready task whose class is free; a mixed task
    needs an otherwise idle step. Returns the makespan.
    """
    preds = {t: set() for t in tasks}
    for a, b in edges:
        preds[b].add(a)
    done = set()
    t = 0
    while len(done) < len(tasks):
        ready = sorted((x for x in tasks if x not in done and preds[x] <= done), key=priority)
        started = []
        for x in ready:
            used = {classes[s] for s in started}
            if not pipelined and started:
                break
            if classes[x] == "mixed":
                if not started:
                    started.append(x)
                    break
                continue
            if "mixed" in used or classes[x] in used:
                continue
            started.append(x)
        if not started:
            raise RuntimeError("stalled")
        done.update(started)
        t += 1
    return t


# ---- QoI ----

def box_violations(v_hat, eps, n_samples, rng):
    """Sample true values in the eps-box around each point; count exact
    rational violations of |Q(v) - Q(v_hat)| <= sum 2|v_hat| eps + eps^2."""
    v_hat = [np.asarray(v, dtype=np.float64).ravel() for v in v_hat]
    npts = v_hat[0].size
    bad = 0
    for _ in range(n_samples):
        p = int(rng.integers(npts))
        # corners are the worst case, so draw them often
        u = rng.choice([-1.0, 1.0], size=len(eps)) if rng.random() < 0.3 else rng.uniform(-1, 1, len(eps))
        qh = Fraction(0)
        qt = Fraction(0)
        bound = Fraction(0)
        for c, e in enumerate(eps):
            vh = Fraction(float(v_hat[c][p]))
            ef = Fraction(float(e))
            vt = vh + Fraction(float(u[c])) * ef
            qh += vh * vh
            qt += vt * vt
            bound += 2 * abs(vh) * ef + ef * ef
        if abs(qt - qh) > bound:
            bad += 1
    return bad

"""Multilevel hierarchical decomposition on uniform grids of any extent.

Level 0 holds the raw samples on the coarsest grid (stride ``2**L`` in every
dimension); level ``j >= 1`` holds hierarchical surpluses of the nodes that
appear when the stride halves from ``2**(L-j+1)`` to ``2**(L-j)``. Prediction
is tensor-product multilinear interpolation from the next-coarser grid; a node
with no right neighbour copies its left neighbour. Every 1D interpolation
weight is non-negative and the weights sum to one, so a coefficient error of
``e_j`` at level ``j`` moves the reconstruction by at most ``e_j``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import NonFiniteInput, ShapeMismatch


class Decomposer(IntEnum):
    IDENTITY = 0
    HIERARCHICAL = 1


def num_refinements(dims) -> int:
    """Number of refinement levels L for a grid with extents ``dims``."""
    n = max(dims) if len(dims) else 1
    if n < 2:
        return 0
    return (n - 2).bit_length()  # == ceil(log2(n - 1))


def _grid_shape(dims, stride):
    return tuple(-(-n // stride) for n in dims)


def _new_node_mask(fine_shape):
    """True at nodes of the fine grid that are not on the coarse grid."""
    mask = np.zeros(fine_shape, dtype=bool)
    for axis, n in enumerate(fine_shape):
        odd = np.zeros(n, dtype=bool)
        odd[1::2] = True
        shape = [1] * len(fine_shape)
        shape[axis] = n
        mask |= odd.reshape(shape)
    return mask


def _upsample_axis(a, axis, n_fine):
    n_coarse = a.shape[axis]
    out_shape = list(a.shape)
    out_shape[axis] = n_fine
    out = np.empty(out_shape, dtype=np.float64)

    even = [slice(None)] * a.ndim
    even[axis] = slice(0, n_fine, 2)
    out[tuple(even)] = a

    n_odd = n_fine // 2
    if n_odd:
        left = np.take(a, np.arange(n_odd), axis=axis)
        right_idx = np.minimum(np.arange(1, n_odd + 1), n_coarse - 1)
        right = np.take(a, right_idx, axis=axis)
        # one-sided copy where the right neighbour is missing
        has_right = np.arange(1, n_odd + 1) < n_coarse
        shape = [1] * a.ndim
        shape[axis] = n_odd
        pred = np.where(has_right.reshape(shape), (left + right) * 0.5, left)
        odd = [slice(None)] * a.ndim
        odd[axis] = slice(1, n_fine, 2)
        out[tuple(odd)] = pred
    return out


def interpolate(coarse: np.ndarray, fine_shape) -> np.ndarray:
    """Multilinear prediction of the stride-h grid from the stride-2h grid."""
    out = np.asarray(coarse, dtype=np.float64)
    for axis, n in enumerate(fine_shape):
        out = _upsample_axis(out, axis, n)
    return out


@dataclass
class LevelDecomposition:
    dims: tuple
    mode: Decomposer
    levels: list = field(default_factory=list)

    @property
    def L(self) -> int:
        return len(self.levels) - 1

    def level_sizes(self) -> list:
        return level_sizes(self.dims, self.mode)

    def nodes(self, j: int) -> np.ndarray:
        return level_nodes(self.dims, self.mode, j)


def level_sizes(dims, mode=Decomposer.HIERARCHICAL) -> list:
    dims = tuple(int(n) for n in dims)
    total = int(np.prod(dims)) if dims else 1
    if Decomposer(mode) == Decomposer.IDENTITY:
        return [total]
    L = num_refinements(dims)
    sizes = [int(np.prod(_grid_shape(dims, 1 << L)))]
    for j in range(1, L + 1):
        fine = int(np.prod(_grid_shape(dims, 1 << (L - j))))
        coarse = int(np.prod(_grid_shape(dims, 1 << (L - j + 1))))
        sizes.append(fine - coarse)
    return sizes


def level_nodes(dims, mode, j: int) -> np.ndarray:
    """Flat (C-order) indices of the grid nodes owned by level ``j``.

    Order matches the coefficient order produced by :func:`decompose`.
    """
    dims = tuple(int(n) for n in dims)
    flat = np.arange(int(np.prod(dims)), dtype=np.int64).reshape(dims)
    if Decomposer(mode) == Decomposer.IDENTITY:
        return flat.ravel()
    L = num_refinements(dims)
    h = 1 << (L - j)
    grid = flat[tuple(slice(None, None, h) for _ in dims)]
    if j == 0:
        return grid.ravel()
    return grid[_new_node_mask(grid.shape)]


def decompose(data, mode=Decomposer.HIERARCHICAL) -> LevelDecomposition:
    x = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("input contains NaN or Inf")
    if x.ndim == 0:
        x = x.reshape(1)
    mode = Decomposer(mode)
    dims = x.shape
    if mode == Decomposer.IDENTITY:
        return LevelDecomposition(dims, mode, [x.ravel().copy()])

    L = num_refinements(dims)
    levels = [x[tuple(slice(None, None, 1 << L) for _ in dims)].ravel().copy()]
    for j in range(1, L + 1):
        h = 1 << (L - j)
        fine = x[tuple(slice(None, None, h) for _ in dims)]
        coarse = x[tuple(slice(None, None, 2 * h) for _ in dims)]
        pred = interpolate(coarse, fine.shape)
        levels.append((fine - pred)[_new_node_mask(fine.shape)])
    return LevelDecomposition(dims, mode, levels)


def recompose(decomp: LevelDecomposition, per_level_error=None):
    """Invert :func:`decompose`.

    Returns the reconstruction and the guaranteed L-inf bound
    ``sum(per_level_error)`` (valid when level ``j`` coefficients are off by at
    most ``per_level_error[j]`` each, up to floating-point roundoff).
    """
    dims = tuple(decomp.dims)
    sizes = level_sizes(dims, decomp.mode)
    if per_level_error is None:
        per_level_error = [0.0] * len(sizes)
    if len(decomp.levels) != len(sizes) or len(per_level_error) != len(sizes):
        raise ShapeMismatch(f"expected {len(sizes)} levels for dims {dims}")
    for j, (c, n) in enumerate(zip(decomp.levels, sizes)):
        if np.asarray(c).size != n:
            raise ShapeMismatch(f"level {j}: expected {n} coefficients, got {np.asarray(c).size}")
    bound = float(sum(float(e) for e in per_level_error))

    if decomp.mode == Decomposer.IDENTITY:
        return np.asarray(decomp.levels[0], dtype=np.float64).reshape(dims).copy(), bound

    L = len(sizes) - 1
    cur = np.asarray(decomp.levels[0], dtype=np.float64).reshape(_grid_shape(dims, 1 << L))
    for j in range(1, L + 1):
        fine_shape = _grid_shape(dims, 1 << (L - j))
        cur = interpolate(cur, fine_shape)
        cur[_new_node_mask(fine_shape)] += np.asarray(decomp.levels[j], dtype=np.float64)
    return cur.reshape(dims), bound


def allocate_level_tolerances(tau: float, num_levels: int) -> list:
    """Uniform split of ``tau``; the last share absorbs rounding so the
    left-to-right sum is within one ulp of ``tau`` and never above it."""
    if num_levels < 1:
        raise ValueError("num_levels must be >= 1")
    if tau < 0:
        raise ValueError("tau must be non-negative")
    share = tau / num_levels
    if num_levels == 1 or math.isinf(tau):
        return [share] * num_levels
    parts = [share] * (num_levels - 1)
    head = sum(parts)
    last = max(tau - head, 0.0)
    while last > 0.0 and head + last > tau:
        last = math.nextafter(last, 0.0)
    return parts + [last]


def roundoff_allowance(ndim: int, num_levels: int, magnitude: float) -> float:
    """Upper bound on floating-point error of a decompose/recompose round trip.

    ``magnitude`` bounds the absolute value of every intermediate
    (the sum of per-level coefficient bounds is a valid choice).
    """
    if magnitude <= 0:
        return 0.0
    return 4.0 * (ndim + 1) * num_levels * magnitude * 2.0 ** -53

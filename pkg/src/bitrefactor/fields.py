"""Deterministic synthetic test fields."""
from __future__ import annotations

import numpy as np

KINDS = ("smooth", "noise", "mixed", "velocity")


def _coords(dims):
    axes = [np.linspace(0.0, 1.0, n, endpoint=n == 1) if n > 1 else np.zeros(1) for n in dims]
    return np.meshgrid(*axes, indexing="ij")


def _modes(dims, rng, count, kmax, slope):
    grid = _coords(dims)
    out = np.zeros(dims)
    for _ in range(count):
        k = rng.integers(1, kmax + 1, size=len(dims))
        amp = float(np.linalg.norm(k)) ** -slope
        phase = rng.uniform(0, 2 * np.pi)
        out += amp * np.sin(2 * np.pi * sum(ki * g for ki, g in zip(k, grid)) + phase)
    return out


def smooth(dims, seed=0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return _modes(tuple(dims), rng, 6, 3, 1.0)


def noise(dims, seed=0) -> np.ndarray:
    return np.random.default_rng(seed).uniform(-1.0, 1.0, size=tuple(dims))


def mixed(dims, seed=0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return _modes(tuple(dims), rng, 6, 3, 1.0) + 0.02 * rng.standard_normal(tuple(dims))


def velocity(dims, seed=0, components=3) -> list:
    """Turbulence-like components: many modes with a decaying spectrum."""
    rng = np.random.default_rng(seed)
    return [_modes(tuple(dims), rng, 24, 4, 5.0 / 3.0) + rng.uniform(-0.5, 0.5)
            for _ in range(components)]


def generate(kind: str, dims, seed=0, dtype=np.float64):
    if kind == "velocity":
        return [v.astype(dtype) for v in velocity(dims, seed)]
    try:
        fn = {"smooth": smooth, "noise": noise, "mixed": mixed}[kind]
    except KeyError:
        raise ValueError(f"unknown field kind {kind!r}; choose from {KINDS}") from None
    return fn(dims, seed).astype(dtype)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bitrefactor.decomposer import (Decomposer, allocate_level_tolerances, decompose, level_nodes, level_sizes,
                                    num_refinements, recompose, roundoff_allowance)
from bitrefactor.errors import NonFiniteInput, ShapeMismatch

import oracles

H = Decomposer.HIERARCHICAL

shapes = st.lists(st.integers(1, 17), min_size=1, max_size=3).map(tuple)


def test_refinement_count_matches_log_formula():
    for n in range(1, 200):
        assert num_refinements((n,)) == oracles.refinements((n,))
    assert num_refinements((5, 33, 2)) == 5


def test_five_point_example_levels():
    d = decompose(np.array([0.0, 2, 4, 2, 0]), H)
    assert [sorted(d.nodes(j).tolist()) for j in range(3)] == [[0, 4], [2], [1, 3]]
    assert d.levels[0].tolist() == [0.0, 0.0]
    assert d.levels[1].tolist() == [4.0]
    # interpolations (0+4)/2 at nodes 1 and 3 are exact
    assert d.levels[2].tolist() == [0.0, 0.0]


def test_identity_mode_is_one_bit_identical_level():
    x = np.random.default_rng(0).standard_normal((7, 5))
    d = decompose(x, Decomposer.IDENTITY)
    assert len(d.levels) == 1
    assert d.levels[0].tobytes() == x.ravel().tobytes()
    y, bound = recompose(d, [0.0])
    assert y.tobytes() == x.tobytes() and bound == 0.0


@pytest.mark.parametrize("dims", [(5,), (9, 9), (4, 6, 3), (1,), (2, 1)])
def test_constant_field_has_zero_surpluses(dims):
    d = decompose(np.full(dims, 1.0), H)
    for lv in d.levels[1:]:
        assert np.all(lv == 0.0)


def test_non_finite_rejected():
    with pytest.raises(NonFiniteInput):
        decompose(np.array([1.0, np.nan]))
    with pytest.raises(NonFiniteInput):
        decompose(np.array([np.inf]), Decomposer.IDENTITY)


@pytest.mark.parametrize("dims", [(1,), (2,), (3,), (5,), (8,), (6, 7), (3, 4, 5), (9, 2, 3)])
def test_matches_scalar_loop_oracle(dims):
    x = np.random.default_rng(sum(dims)).standard_normal(dims)
    d = decompose(x, H)
    ref = oracles.scalar_decompose(x)
    assert len(d.levels) == len(ref)
    for j, want in enumerate(ref):
        nodes = d.nodes(j).tolist()
        assert sorted(nodes) == sorted(want)
        got = dict(zip(nodes, d.levels[j].tolist()))
        for k, v in want.items():
            assert got[k] == pytest.approx(v, abs=1e-12)


@given(shapes)
@settings(max_examples=60, deadline=None)
def test_levels_partition_grid(dims):
    seen = np.concatenate([level_nodes(dims, H, j) for j in range(len(level_sizes(dims, H)))])
    assert sorted(seen.tolist()) == list(range(int(np.prod(dims))))
    assert [level_nodes(dims, H, j).size for j in range(len(level_sizes(dims, H)))] == level_sizes(dims, H)


@given(shapes, st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_roundtrip_relative_1e12(dims, seed):
    x = np.random.default_rng(seed).uniform(-1e3, 1e3, dims)
    y, bound = recompose(decompose(x, H))
    span = float(x.max() - x.min()) or 1.0
    assert bound == 0.0
    assert np.max(np.abs(y - x)) <= 1e-12 * span


def test_roundtrip_large_extents():
    for dims in [(65,), (65, 40), (33, 17, 65)]:
        x = np.random.default_rng(1).standard_normal(dims)
        y, _ = recompose(decompose(x, H))
        assert np.max(np.abs(y - x)) <= 1e-12 * float(x.max() - x.min())


def test_dyadic_values_roundtrip_bit_exact():
    # small integers: every interpolation and surplus is exact in binary
    rng = np.random.default_rng(3)
    for dims in [(17,), (9, 9), (5, 9, 3)]:
        x = rng.integers(-64, 64, dims).astype(np.float64)
        y, _ = recompose(decompose(x, H))
        assert y.tobytes() == x.tobytes()


def test_bound_is_sum_of_level_errors():
    d = decompose(np.arange(5.0), H)
    assert recompose(d, [0.25, 0.5, 0.125])[1] == 0.875
    with pytest.raises(ShapeMismatch):
        recompose(d, [0.1, 0.2])


def test_recompose_rejects_wrong_coefficient_counts():
    d = decompose(np.arange(9.0), H)
    d.levels[1] = d.levels[1][:-1]
    with pytest.raises(ShapeMismatch):
        recompose(d)


def test_error_bound_soundness_randomized():
    """Perturb each level by at most e_l; the result moves by at most sum e_l."""
    rng = np.random.default_rng(11)
    for trial in range(1000):
        ndim = int(rng.integers(1, 4))
        dims = tuple(int(n) for n in rng.integers(1, 12 if ndim == 3 else 30, ndim))
        x = rng.standard_normal(dims)
        d = decompose(x, H)
        errs = [float(rng.uniform(0, 1e-3)) for _ in d.levels]
        noisy = [c + rng.uniform(-1, 1, c.size) * e for c, e in zip(d.levels, errs)]
        # worst case signs on some trials
        if trial % 3 == 0:
            noisy = [c + np.sign(rng.standard_normal(c.size)) * e for c, e in zip(d.levels, errs)]
        d.levels = noisy
        y, bound = recompose(d, errs)
        slack = roundoff_allowance(ndim, len(errs), float(np.abs(x).max()) + bound)
        assert np.max(np.abs(y - x)) <= bound + slack


def test_allocate_level_tolerances():
    assert allocate_level_tolerances(1.0, 4) == [0.25] * 4
    assert allocate_level_tolerances(0.0, 3) == [0.0] * 3
    assert allocate_level_tolerances(2.0 ** -10, 1) == [2.0 ** -10]
    parts = allocate_level_tolerances(0.3, 7)
    assert abs(sum(parts) - 0.3) <= np.spacing(0.3)


@given(st.floats(0, 1e6, allow_subnormal=False), st.integers(1, 40))
def test_split_sums_to_tau_within_one_ulp(tau, n):
    parts = allocate_level_tolerances(tau, n)
    assert len(parts) == n and min(parts) >= 0
    assert sum(parts) <= tau
    assert tau - sum(parts) <= np.spacing(tau)

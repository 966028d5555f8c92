import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clockauction.errors import CapacityError, InputError
from clockauction.feasibility import FeasibilitySystem
from clockauction.generators import random_antichain, random_knapsack

from conftest import exhaustive_best, exhaustive_maximal, feasible_masks

TWO = FeasibilitySystem.from_sets([[0, 1], [2]])


@pytest.mark.parametrize(
    "system, query, expected",
    [
        (TWO, [0, 1], True),
        (TWO, [0, 2], False),
        (TWO, [], True),
        (FeasibilitySystem.knapsack([0.5, 0.6, 0.3]), [0, 2], True),
        (FeasibilitySystem.knapsack([0.5, 0.6, 0.3]), [0, 1], False),
    ],
)
def test_is_feasible(system, query, expected):
    assert system.is_feasible(query) is expected


def test_out_of_range_index():
    with pytest.raises(InputError):
        TWO.is_feasible([5])


def test_enumerate_maximal_sets():
    assert TWO.enumerate_maximal_sets() == [(0, 1), (2,)]
    assert FeasibilitySystem.knapsack([0.5, 0.5, 0.5]).enumerate_maximal_sets() == [(0, 1), (0, 2), (1, 2)]
    assert FeasibilitySystem.knapsack([1.0, 1.0]).enumerate_maximal_sets() == [(0,), (1,)]


def test_knapsack_capacity_error():
    with pytest.raises(CapacityError, match="explicit"):
        FeasibilitySystem.knapsack([0.01] * 30, enum_cap=24).enumerate_maximal_sets()


def test_knapsack_boundary_is_feasible():
    # 0.1 + 0.2 + 0.7 lands a hair above 1 in floating point
    assert FeasibilitySystem.knapsack([0.1, 0.2, 0.7]).is_feasible([0, 1, 2])


@pytest.mark.parametrize(
    "system, weights, expected",
    [
        (TWO, (1, 2, 4), ((2,), 4)),
        (TWO, (0, 0, 0), ((0, 1), 0)),
        (FeasibilitySystem.knapsack([0.5, 0.5, 0.5]), (3, 3, 4), ((0, 2), 7)),
    ],
)
def test_max_weight_examples(system, weights, expected):
    S, w = system.max_weight_feasible_subset(range(system.n), weights)
    assert (tuple(S), w) == expected


def test_largest_feasible_subset_examples():
    assert TWO.largest_feasible_subset([1, 2]) == (1,)
    assert TWO.largest_feasible_subset([0, 1, 2]) == (0, 1)
    assert FeasibilitySystem.knapsack([0.4, 0.4, 0.4]).largest_feasible_subset([0, 1, 2]) == (0, 1)


def test_antichain_validation():
    with pytest.raises(InputError, match="antichain"):
        FeasibilitySystem.from_sets([[0, 1], [0]])
    with pytest.raises(InputError):
        FeasibilitySystem.from_sets([[0, 0]])
    with pytest.raises(InputError):
        FeasibilitySystem.knapsack([0.5, 1.5])


def test_disjoint_groups():
    s = FeasibilitySystem.disjoint_groups([2, 3])
    assert s.n == 5 and s.k == 2
    assert s.enumerate_maximal_sets() == [(2, 3, 4), (0, 1)]


def _systems(draw_seed, n, knap):
    rng = np.random.default_rng(draw_seed)
    return random_knapsack(rng, n) if knap else random_antichain(rng, n)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 9), st.booleans(), st.integers(0, 10**6))
def test_max_weight_matches_exhaustive(seed, n, knap, wseed):
    system = _systems(seed, n, knap)
    wr = np.random.default_rng(wseed)
    # small integer weights produce plenty of exact ties
    w = wr.integers(0, 4, n).astype(float) if wseed % 2 else wr.random(n)
    active = np.flatnonzero(wr.random(n) < 0.8)
    got = system.max_weight_feasible_subset(active, w)
    want = exhaustive_best(system, active, w)
    assert tuple(got[0]) == want[0]
    assert got[1] == pytest.approx(want[1], abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 10))
def test_knapsack_maximal_sets_match_exhaustive(seed, n):
    system = _systems(seed, n, True)
    assert set(system.enumerate_maximal_sets()) == exhaustive_maximal(system)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 9), st.booleans())
def test_batch_queries_match_scalar(seed, n, knap):
    system = _systems(seed, n, knap)
    r = np.random.default_rng(seed + 1)
    A = r.random((40, n)) < 0.6
    W = r.integers(0, 3, (40, n)).astype(float)
    chosen, tot = system.batch_max_weight(A, W)
    for row in range(40):
        S, w = system.max_weight_feasible_subset(np.flatnonzero(A[row]), W[row])
        assert tuple(np.flatnonzero(chosen[row])) == tuple(S)
        assert tot[row] == pytest.approx(w)
    assert system.batch_is_feasible(A).tolist() == [system.is_feasible(np.flatnonzero(a)) for a in A]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(10, 16))
def test_branch_and_bound_matches_exhaustive(seed, n):
    system = _systems(seed, n, True)
    r = np.random.default_rng(seed)
    w = r.random(n)
    F = feasible_masks(system)
    best = (F.astype(float) @ w).max()
    S, val = system.branch_and_bound(range(n), w)
    assert val == pytest.approx(best, abs=1e-12)
    assert system.is_feasible(S)


def test_downward_closed(rng):
    for _ in range(20):
        system = random_antichain(rng, 6)
        for row in feasible_masks(system):
            for i in np.flatnonzero(row):
                sub = row.copy()
                sub[i] = False
                assert system.is_feasible(np.flatnonzero(sub))

"""Independent oracles shared by the test modules.

Nothing here calls into the feasibility code paths under test; subsets are
enumerated directly from the maximal-set list or the demand vector.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest


def all_masks(n: int) -> np.ndarray:
    """Every subset of ``range(n)`` as a ``2**n x n`` boolean matrix."""
    ids = np.arange(2**n)[:, None]
    return ((ids >> np.arange(n)[None, :]) & 1).astype(bool)


def feasible_masks(system) -> np.ndarray:
    M = all_masks(system.n)
    if system.kind == "knapsack":
        d = np.asarray(system.demands, dtype=float)
        return M[M.astype(float) @ d <= 1.0 + 1e-12]
    ok = np.zeros(M.shape[0], dtype=bool)
    for s in system.maximal_sets:
        inside = np.zeros(system.n, dtype=bool)
        inside[list(s)] = True
        ok |= ~(M & ~inside).any(axis=1)
    return M[ok]


def exhaustive_best(system, active, weights):
    """(subset, weight) maximising fsum weight, then size, then lexicographic order."""
    w = [float(x) for x in weights]
    act = set(int(i) for i in active)
    best = None
    for row in feasible_masks(system):
        S = tuple(int(i) for i in np.flatnonzero(row))
        if not set(S) <= act:
            continue
        key = (math.fsum(w[i] for i in S), len(S))
        if best is None or key > best[0] or (key == best[0] and S < best[1]):
            best = (key, S)
    return best[1], best[0][0]


def exhaustive_maximal(system) -> set[tuple[int, ...]]:
    F = {tuple(int(i) for i in np.flatnonzero(r)) for r in feasible_masks(system)}
    return {S for S in F if not any(set(S) < set(T) for T in F)}


def exact_expected_welfare(instance, run) -> Fraction:
    """``E[sum of served values]`` in rationals, ``run(values) -> transcript`` per joint outcome."""
    total = Fraction(0)
    for values, prob in instance.enumerate_joint_exact():
        tr = run([float(x) for x in values])
        total += prob * sum((values[i] for i in tr.served), Fraction(0))
    return total


def exact_opt(instance) -> Fraction:
    sets = instance.feasibility.enumerate_maximal_sets()
    return sum(
        (prob * max(sum((values[i] for i in S), Fraction(0)) for S in sets) for values, prob in instance.enumerate_joint_exact()),
        Fraction(0),
    )


def subsets(n):
    return itertools.chain.from_iterable(itertools.combinations(range(n), r) for r in range(n + 1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

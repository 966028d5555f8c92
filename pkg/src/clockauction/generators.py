"""Named instance families and random instance builders."""

from __future__ import annotations

from fractions import Fraction
from typing import Callable

import numpy as np

from .errors import InputError
from .feasibility import FeasibilitySystem
from .stats import stream
from .valuation import DiscreteFinite, Instance, PointMass, Uniform

GEN_KEY = 11


def random_antichain(rng: np.random.Generator, n: int, max_sets: int = 6) -> FeasibilitySystem:
    """Random maximal-set system over ``n`` bidders; bidders left uncovered become singleton sets."""
    sets: set[frozenset] = set()
    for _ in range(int(rng.integers(1, max_sets + 1))):
        size = int(rng.integers(1, n + 1))
        sets.add(frozenset(rng.choice(n, size, replace=False).tolist()))
    sets = {s for s in sets if not any(s < t for t in sets)}
    covered = frozenset().union(*sets)
    sets |= {frozenset([i]) for i in range(n) if i not in covered}
    return FeasibilitySystem.from_sets([sorted(s) for s in sets], n=n)


def random_knapsack(rng: np.random.Generator, n: int, low: float = 0.05, high: float = 0.7) -> FeasibilitySystem:
    return FeasibilitySystem.knapsack(np.round(rng.uniform(low, high, n), 6).tolist())


def random_system(rng: np.random.Generator, n: int, kind: str = "mixed", max_sets: int = 6) -> FeasibilitySystem:
    if kind == "mixed":
        kind = "knapsack" if rng.random() < 0.5 else "maximal_sets"
    if kind == "knapsack":
        return random_knapsack(rng, n)
    return random_antichain(rng, n, max_sets)


def random_discrete(rng: np.random.Generator, ell: int, vmax: int = 10) -> DiscreteFinite | PointMass:
    """Support of size ``1..ell`` on small integers with rational probabilities."""
    size = int(rng.integers(1, ell + 1))
    values = sorted(rng.choice(np.arange(0, vmax + 1), size, replace=False).tolist())
    if size == 1:
        return PointMass(float(values[0]))
    w = rng.integers(1, 10, size)
    probs = [Fraction(int(x), int(w.sum())) for x in w]
    return DiscreteFinite(tuple(float(v) for v in values), tuple(probs))


def random_discrete_instance(
    rng: np.random.Generator, n_max: int = 8, ell: int = 3, kind: str = "mixed", n_min: int = 1
) -> Instance:
    n = int(rng.integers(n_min, n_max + 1))
    system = random_system(rng, n, kind)
    return Instance(tuple(random_discrete(rng, ell) for _ in range(n)), system, name="random-discrete")


def random_binary_instance(rng: np.random.Generator, n_max: int = 10, k_max: int = 8) -> tuple[Instance, np.ndarray]:
    """Random downward-closed system with Bernoulli bidders, plus one binary valuation."""
    n = int(rng.integers(1, n_max + 1))
    system = random_antichain(rng, n, max_sets=k_max)
    while system.k > k_max:
        system = random_antichain(rng, n, max_sets=k_max)
    q = rng.uniform(0.2, 0.8, n)
    dists = tuple(DiscreteFinite((0.0, 1.0), (1 - float(x), float(x))) for x in np.round(q, 3))
    v = (rng.random(n) < q).astype(float)
    return Instance(dists, system, name="random-binary"), v


def random_mixed_instance(rng: np.random.Generator, n_max: int = 12) -> Instance:
    """Mixed explicit/knapsack system with a mix of continuous and discrete bidders."""
    n = int(rng.integers(1, n_max + 1))
    system = random_system(rng, n, "mixed")
    dists = []
    for _ in range(n):
        r = rng.random()
        if r < 0.4:
            dists.append(Uniform(0.0, float(np.round(rng.uniform(0.5, 2.0), 3))))
        elif r < 0.8:
            dists.append(random_discrete(rng, 3, vmax=5))
        else:
            dists.append(PointMass(float(np.round(rng.uniform(0, 2), 3))))
    return Instance(tuple(dists), system, name="random-mixed")


# -- named families ---------------------------------------------------------------


def disjoint_iid_uniform(k: int, seed: int = 0, group_size: int = 8) -> Instance:
    """``k`` disjoint groups of ``group_size`` i.i.d. Uniform(0, 1) bidders."""
    system = FeasibilitySystem.disjoint_groups([group_size] * k)
    return Instance(tuple([Uniform(0.0, 1.0)] * system.n), system, name=f"disjoint-iid-uniform-k{k}")


def knapsack_random(k: int, seed: int = 0) -> Instance:
    """Knapsack over ``k`` bidders (k counts bidders here) with Uniform(0, 1) values."""
    rng = stream(seed, GEN_KEY, 1, k)
    system = random_knapsack(rng, k)
    return Instance(tuple([Uniform(0.0, 1.0)] * k), system, name=f"knapsack-random-n{k}")


def binary_random(k: int, seed: int = 0) -> Instance:
    """``k`` disjoint groups of 1 to 4 Bernoulli bidders."""
    rng = stream(seed, GEN_KEY, 2, k)
    sizes = rng.integers(1, 5, k).tolist()
    system = FeasibilitySystem.disjoint_groups(sizes)
    q = np.round(rng.uniform(0.2, 0.8, system.n), 3)
    dists = tuple(DiscreteFinite((0.0, 1.0), (1 - float(x), float(x))) for x in q)
    return Instance(dists, system, name=f"binary-random-k{k}")


def pointmass_family(k: int, seed: int = 0) -> Instance:
    """``k`` disjoint groups of 3 deterministic bidders."""
    rng = stream(seed, GEN_KEY, 3, k)
    system = FeasibilitySystem.disjoint_groups([3] * k)
    vals = np.round(rng.uniform(0, 1, system.n), 3)
    return Instance(tuple(PointMass(float(x)) for x in vals), system, name=f"pointmass-k{k}")


def lowerbound_family(k: int = 2, seed: int = 0) -> Instance:
    from .evaluation import lower_bound_instance

    return lower_bound_instance()


GENERATORS: dict[str, Callable[..., Instance]] = {
    "disjoint-iid-uniform": disjoint_iid_uniform,
    "knapsack-random": knapsack_random,
    "binary-random": binary_random,
    "pointmass": pointmass_family,
    "lowerbound": lowerbound_family,
}


def generate(name: str, k: int, seed: int = 0) -> Instance:
    if name not in GENERATORS:
        raise InputError(f"unknown generator {name!r}; choose from {', '.join(GENERATORS)}")
    if k < 1:
        raise InputError("k must be >= 1")
    return GENERATORS[name](k, seed)

"""Seeded streams and expectation estimates (exact enumeration or Monte Carlo)."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .valuation import Instance

Z95 = 1.959963984540054
EXACT_LIMIT = 10**6


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator derived from a master seed and a key path (trial index, chunk index, ...)."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys)))


@dataclass(frozen=True)
class Estimate:
    """A point estimate with 95% normal-approximation half-width (0 when exact)."""

    value: float
    half_width: float
    trials: int
    exact: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def mean_ci(samples: np.ndarray) -> Estimate:
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.size
    mean = float(samples.mean()) if n else math.nan
    hw = Z95 * float(samples.std(ddof=1)) / math.sqrt(n) if n > 1 else 0.0
    return Estimate(mean, hw, n)


def can_enumerate(instance: Instance, limit: int = EXACT_LIMIT) -> bool:
    return instance.all_discrete and instance.joint_support_size() <= limit


def chunk_rows(n: int, budget: int = 2_000_000) -> int:
    return max(1, budget // max(n, 1))


def expectation(
    instance: Instance,
    integrand: Callable[[np.ndarray], np.ndarray | tuple],
    trials: int,
    seed: int,
    exact: bool | None = None,
    purpose: int = 0,
) -> list[Estimate]:
    """Estimate ``E[f(v)]`` for one or more integrands evaluated on a batch of profiles.

    ``integrand`` maps a ``rows x n`` matrix to a vector (or tuple of vectors) of per-row values.
    With ``exact`` unset, full joint enumeration is used whenever the support is at most
    ``EXACT_LIMIT`` outcomes, and Monte Carlo otherwise. Monte Carlo draws come in fixed-size chunks,
    each from ``stream(seed, purpose, chunk)``, so results depend only on the seed.
    """
    if exact is None:
        exact = can_enumerate(instance)
    if exact:
        V, P = instance.enumerate_joint()
        totals = None
        step = chunk_rows(instance.n)
        for s in range(0, V.shape[0], step):
            vals = _as_tuple(integrand(V[s : s + step]))
            part = [math.fsum(P[s : s + step] * v) for v in vals]
            totals = part if totals is None else [a + b for a, b in zip(totals, part)]
        return [Estimate(float(t), 0.0, int(V.shape[0]), exact=True) for t in totals]
    if trials < 1:
        raise ValueError("trials must be >= 1")
    step = chunk_rows(instance.n)
    sums = sq = None
    done, chunk = 0, 0
    while done < trials:
        rows = min(step, trials - done)
        V = instance.sample_matrix(stream(seed, purpose, chunk), rows)
        vals = _as_tuple(integrand(V))
        s1 = [math.fsum(v) for v in vals]
        s2 = [math.fsum(v * v) for v in vals]
        sums = s1 if sums is None else [a + b for a, b in zip(sums, s1)]
        sq = s2 if sq is None else [a + b for a, b in zip(sq, s2)]
        done += rows
        chunk += 1
    out = []
    for s1, s2 in zip(sums, sq):
        mean = s1 / trials
        var = max(s2 / trials - mean * mean, 0.0) * trials / (trials - 1) if trials > 1 else 0.0
        out.append(Estimate(mean, Z95 * math.sqrt(var / trials), trials))
    return out


def _as_tuple(x):
    return x if isinstance(x, tuple) else (x,)

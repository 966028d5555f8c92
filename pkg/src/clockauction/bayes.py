"""Bayesian quantities derived from the prior: thresholds, benchmark terms, price-ladder inputs.

Logs are base 2 unless a ``base`` argument says otherwise.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InputError
from .stats import Estimate, expectation
from .valuation import Instance, ValueDistribution

# count-concentration factor in the core events
CORE_FACTOR = 10


def log_b(x: float, base: float = 2.0) -> float:
    return math.log(x) / math.log(base)


def threshold_target(k: int, base: float = 2.0) -> float:
    """Expected strict-exceedance count that defines t_S: ``log k``, floored at 1 so k = 1 stays meaningful."""
    return max(log_b(k, base), 1.0)


def default_m(k: int, base: float = 2.0) -> int:
    return max(1, math.ceil(CORE_FACTOR * log_b(k, base) + 1 - 1e-12))


def default_alpha(m: int) -> float:
    return 2.0 * (math.ceil(math.log2(m) - 1e-12) + 2)


@dataclass(frozen=True)
class BayesParams:
    thresholds: tuple[float, ...]
    delta: Estimate | None
    opt_estimate: Estimate
    m: int
    alpha: float
    goal: float
    base: float = 2.0

    def __post_init__(self):
        if self.m < 1:
            raise InputError("m must be a positive integer")
        if any(t < 0 for t in self.thresholds):
            raise InputError("thresholds must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "thresholds": list(self.thresholds),
            "delta": None if self.delta is None else self.delta.to_dict(),
            "opt_estimate": self.opt_estimate.to_dict(),
            "m": self.m,
            "alpha": self.alpha,
            "goal": self.goal,
            "base": self.base,
        }


@dataclass(frozen=True)
class DecompositionEstimate:
    low: Estimate
    low_core: Estimate
    low_tail: Estimate
    high: Estimate
    high_core: Estimate
    high_tail: Estimate
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).to_dict() for k in ("low", "low_core", "low_tail", "high", "high_core", "high_tail")}


# -- thresholds -------------------------------------------------------------------


class _TailSum:
    """``sum_i Pr[v_i > t]`` (and the weak version) over a multiset of distributions."""

    def __init__(self, dists: Sequence[ValueDistribution]):
        self.groups = list(Counter(dists).items())

    def strict(self, t):
        return sum(c * np.asarray(d.tail_prob(t), dtype=float) for d, c in self.groups)

    def weak(self, t):
        return sum(c * np.asarray(d.tail_prob_weak(t), dtype=float) for d, c in self.groups)


def compute_threshold(instance: Instance, S: Sequence[int], target: float) -> float:
    """Smallest ``t >= 0`` with ``sum_{i in S} Pr[v_i > t] <= target``.

    The strict-tail sum is nonincreasing and right-continuous, so the smallest such
    ``t`` exists. It is either a support atom, located exactly, or a point inside a
    continuous stretch, located by bisection.
    """
    if not target > 0:
        raise InputError("threshold target must be positive")
    dists = [instance.distributions[i] for i in S]
    if not dists:
        return 0.0
    f = _TailSum(dists)
    if f.strict(0.0) <= target:
        return 0.0
    atoms = sorted({a for d in dists for a in d.atoms() if a > 0})
    top = max(d.upper for d in dists)
    if math.isinf(top):
        top = max([1.0] + atoms)
        while f.strict(top) > target:
            top *= 2.0
    points = [0.0] + [a for a in atoms if a < top] + [top]
    for lo, hi in zip(points, points[1:]):
        if f.weak(hi) <= target:
            return _bisect(f, lo, hi, target)
        if f.strict(hi) <= target:
            return hi
    return top


def _bisect(f: _TailSum, lo: float, hi: float, target: float) -> float:
    # invariant: f(lo) > target >= f(hi)
    for _ in range(200):
        if hi - lo <= 1e-13 * max(1.0, abs(hi)):
            break
        mid = 0.5 * (lo + hi)
        if f.strict(mid) <= target:
            hi = mid
        else:
            lo = mid
    return hi


def compute_thresholds(instance: Instance, target: float | None = None, base: float = 2.0) -> tuple[float, ...]:
    """t_S for every maximal set, in canonical set order. Sets with equal distribution multisets share one solve."""
    if target is None:
        target = threshold_target(instance.k, base)
    cache: dict = {}
    out = []
    for S in instance.feasibility.enumerate_maximal_sets():
        key = frozenset(Counter(instance.distributions[i] for i in S).items())
        if key not in cache:
            cache[key] = compute_threshold(instance, S, target)
        out.append(cache[key])
    return tuple(out)


# -- integrands -------------------------------------------------------------------


def set_sums(instance: Instance, V: np.ndarray) -> np.ndarray:
    """``rows x k`` matrix of per-set value totals."""
    return V @ instance.feasibility._incidence_f.T


def opt_integrand(instance: Instance):
    def f(V):
        return set_sums(instance, V).max(axis=1)

    return f


def estimate_opt(instance: Instance, trials: int = 100_000, seed: int = 0, exact: bool | None = None) -> Estimate:
    """Expected optimal welfare ``E[max_S sum_{i in S} v_i]``."""
    return expectation(instance, opt_integrand(instance), trials, seed, exact=exact, purpose=1)[0]


def _high_core_integrand(instance: Instance, thresholds: Sequence[float], m: int):
    members = instance.feasibility._members

    def f(V):
        best = np.zeros(V.shape[0])
        for s, idx in enumerate(members):
            X = V[:, idx]
            above = X > thresholds[s]
            val = np.where(above, X, 0.0).sum(axis=1) * (above.sum(axis=1) <= m)
            np.maximum(best, val, out=best)
        return best

    return f


def compute_delta(
    instance: Instance, thresholds: Sequence[float], m: int, trials: int = 100_000, seed: int = 0, exact: bool | None = None
) -> Estimate:
    """Expected best set total of strictly-above-threshold values, counting only sets with at most ``m`` such bidders."""
    if m < 1:
        raise InputError("m must be >= 1")
    return expectation(instance, _high_core_integrand(instance, thresholds, m), trials, seed, exact=exact, purpose=2)[0]


def _sorted_with_counts(X: np.ndarray):
    """Row-sorted values and, per entry, the count of row entries >= that entry."""
    Y = np.sort(X, axis=1)
    s = Y.shape[1]
    if s == 0:
        return Y, np.zeros_like(Y, dtype=np.int64)
    pos = np.arange(s)
    start = np.ones_like(Y, dtype=bool)
    start[:, 1:] = Y[:, 1:] != Y[:, :-1]
    first = np.maximum.accumulate(np.where(start, pos, 0), axis=1)
    return Y, s - first


def count_pieces(X: np.ndarray, t: float, expected_weak):
    """Right endpoints ``b`` of the pieces of ``[0, t)``, the strict-exceedance count on each piece,
    and the infimum of the expected count over the piece.

    Returned arrays are ``rows x (s+1)``. The last column is the piece ending at ``t``.
    ``valid`` marks real pieces. The count ``|S(x, v)|`` is a step function, so these
    finitely many pieces decide every existential event over ``x`` exactly.
    """
    rows, s = X.shape
    Y, ge = _sorted_with_counts(X)
    b = np.concatenate([Y, np.full((rows, 1), float(t))], axis=1)
    c = np.concatenate([ge, (X >= t).sum(axis=1, keepdims=True)], axis=1)
    valid = np.concatenate([(Y > 0) & (Y < t), np.full((rows, 1), t > 0)], axis=1)
    ew = np.asarray(expected_weak(b), dtype=float) if b.size else np.zeros_like(b)
    return b, c, ew, valid


def lemma32_event(X: np.ndarray, t: float, expected_weak, factor: float = CORE_FACTOR, slack: float = 0.0) -> np.ndarray:
    """Per row: does some ``x`` in ``[0, t)`` have ``|S(x,v)| > factor * E|S(x,v)| + slack``?"""
    if X.shape[1] == 0:
        return np.zeros(X.shape[0], dtype=bool)
    b, c, ew, valid = count_pieces(X, t, expected_weak)
    return (valid & (c > factor * ew + slack)).any(axis=1)


def _decomposition_integrand(instance: Instance, thresholds: Sequence[float], m: int):
    members = instance.feasibility._members
    tails = [_TailSum([instance.distributions[i] for i in idx]) for idx in members]
    means = instance.expected_values

    def f(V):
        rows = V.shape[0]
        low = np.zeros(rows)
        low_core = np.zeros(rows)
        high = np.zeros(rows)
        high_core = np.zeros(rows)
        low_tail = np.zeros(rows)
        for s, idx in enumerate(members):
            t = thresholds[s]
            X = V[:, idx]
            above = X > t
            hi = np.where(above, X, 0.0).sum(axis=1)
            lo = np.minimum(X, t).sum(axis=1)
            np.maximum(high, hi, out=high)
            np.maximum(high_core, hi * (above.sum(axis=1) <= m), out=high_core)
            np.maximum(low, lo, out=low)
            b, c, ew, valid = count_pieces(X, t, tails[s].weak)
            lim = CORE_FACTOR * ew
            core_ok = ~(valid & (c > lim + 1)).any(axis=1)
            np.maximum(low_core, lo * core_ok, out=low_core)
            # with bidder i removed: pieces where c - 1 > lim hit everyone; pieces where
            # only c > lim hit bidders whose value is below the piece's right end
            everyone = (valid & (c - 1 > lim)).any(axis=1)
            marginal = valid & (c > lim)
            reach = np.where(marginal, b, -np.inf).max(axis=1)
            hit = everyone[:, None] | (X < reach[:, None])
            low_tail += hit.astype(float) @ means[idx]
        return low, low_core, low_tail, high, high_core

    return f


def poisson_binomial_pmf(probs: Sequence[float]) -> np.ndarray:
    pmf = np.zeros(len(probs) + 1)
    pmf[0] = 1.0
    for j, q in enumerate(probs):
        pmf[1 : j + 2] = pmf[1 : j + 2] * (1 - q) + pmf[: j + 1] * q
        pmf[0] *= 1 - q
    return pmf


def high_tail_exact(instance: Instance, thresholds: Sequence[float], m: int) -> float:
    """``sum_S sum_{i in S} E[v_i] * Pr[|S(t_S, v) - {i}| > m - 1]``, by Poisson-binomial recursion."""
    total = []
    means = instance.expected_values
    for s, S in enumerate(instance.feasibility.enumerate_maximal_sets()):
        q = [float(instance.distributions[i].tail_prob(thresholds[s])) for i in S]
        for pos, i in enumerate(S):
            pmf = poisson_binomial_pmf(q[:pos] + q[pos + 1 :])
            total.append(means[i] * math.fsum(pmf[m:]))
    return math.fsum(total)


def estimate_decomposition(
    instance: Instance,
    thresholds: Sequence[float],
    m: int,
    trials: int = 100_000,
    seed: int = 0,
    exact: bool | None = None,
) -> DecompositionEstimate:
    """All benchmark decomposition terms from one shared sample (or exact enumeration).

    HIGH-TAIL has a closed form as a sum of Poisson-binomial tails and is computed exactly.
    """
    low, low_core, low_tail, high, high_core = expectation(
        instance, _decomposition_integrand(instance, thresholds, m), trials, seed, exact=exact, purpose=3
    )
    high_tail = Estimate(high_tail_exact(instance, thresholds, m), 0.0, 0, exact=True)
    return DecompositionEstimate(low, low_core, low_tail, high, high_core, high_tail)


# -- parameter bundles ------------------------------------------------------------


def mechanism2_params(
    instance: Instance,
    opt_estimate: Estimate | float,
    k: int | None = None,
    alpha_override: float | None = None,
    base: float = 2.0,
) -> BayesParams:
    """Revenue goal ``g = OPT / (4 alpha)`` with ``m = ceil(10 log k + 1)`` and default ``alpha = 2 (ceil(log2 m) + 2)``."""
    if not isinstance(opt_estimate, Estimate):
        opt_estimate = Estimate(float(opt_estimate), 0.0, 0, exact=True)
    if opt_estimate.value < 0:
        raise InputError("OPT estimate must be nonnegative")
    k = instance.k if k is None else k
    m = default_m(k, base)
    alpha = float(alpha_override) if alpha_override is not None else default_alpha(m)
    if not alpha > 0:
        raise InputError("alpha must be positive")
    return BayesParams(
        thresholds=(),
        delta=None,
        opt_estimate=opt_estimate,
        m=m,
        alpha=alpha,
        goal=opt_estimate.value / (4.0 * alpha),
        base=base,
    )


def bayes_params(
    instance: Instance,
    trials: int = 100_000,
    seed: int = 0,
    m: int | None = None,
    alpha_override: float | None = None,
    base: float = 2.0,
    exact: bool | None = None,
) -> BayesParams:
    """Everything the prior-based auctions need: thresholds, Delta, OPT, m, alpha, g."""
    k = instance.k
    m = default_m(k, base) if m is None else m
    thresholds = compute_thresholds(instance, threshold_target(k, base), base)
    delta = compute_delta(instance, thresholds, m, trials, seed, exact=exact)
    opt = estimate_opt(instance, trials, seed, exact=exact)
    alpha = float(alpha_override) if alpha_override is not None else default_alpha(m)
    return BayesParams(
        thresholds=thresholds,
        delta=delta,
        opt_estimate=opt,
        m=m,
        alpha=alpha,
        goal=opt.value / (4.0 * alpha),
        base=base,
    )

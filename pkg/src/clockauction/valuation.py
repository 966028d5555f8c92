"""Value distributions, instances and valuation profiles.

Two tail conventions appear throughout the package:

* ``tail_prob(p)`` is the strict tail ``Pr[v > p]``. It counts bidders strictly above a threshold.
* ``tail_prob_weak(p)`` is ``Pr[v >= p]``. It is the probability that a bidder accepts a clock price ``p``,
  since a bidder drops only when the price exceeds the value.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Real
from typing import Iterator, Sequence

import numpy as np

from .errors import InputError, UndefinedConditionalError
from .feasibility import FeasibilitySystem

CONTINUOUS = "continuous"

Number = Real  # float, int or Fraction


def _nonneg(name: str, x) -> None:
    if isinstance(x, float) and math.isnan(x):
        raise InputError(f"{name} is NaN")
    if x < 0:
        raise InputError(f"{name}={x} must be nonnegative")


class ValueDistribution:
    """Common interface. Subclasses are frozen dataclasses."""

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def tail_prob(self, p):
        raise NotImplementedError

    def tail_prob_weak(self, p):
        raise NotImplementedError

    def cdf(self, x):
        return 1.0 - self.tail_prob(x)

    @property
    def expected_value(self) -> float:
        raise NotImplementedError

    def partial_below(self, p) -> float:
        """``E[v * 1{v < p}]``."""
        raise NotImplementedError

    def cte(self, p) -> float:
        """Conditional tail expectation ``E[v | v >= p]``."""
        mass = float(self.tail_prob_weak(p))
        if mass <= 0.0:
            raise UndefinedConditionalError(f"Pr[v >= {p}] = 0 under {self}")
        return (self.expected_value - self.partial_below(p)) / mass

    def support(self):
        return CONTINUOUS

    def atoms(self) -> tuple[float, ...]:
        """Points carrying positive probability mass."""
        return ()

    @property
    def upper(self) -> float:
        """Supremum of the support (``inf`` when unbounded)."""
        raise NotImplementedError

    @property
    def is_discrete(self) -> bool:
        return self.support() != CONTINUOUS

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class PointMass(ValueDistribution):
    v: Number

    def __post_init__(self):
        _nonneg("v", self.v)

    def sample(self, rng, size=None):
        if size is None:
            return float(self.v)
        return np.full(size, float(self.v))

    def tail_prob(self, p):
        return np.where(np.asarray(p) < float(self.v), 1.0, 0.0) if np.ndim(p) else float(p < self.v)

    def tail_prob_weak(self, p):
        return np.where(np.asarray(p) <= float(self.v), 1.0, 0.0) if np.ndim(p) else float(p <= self.v)

    @property
    def expected_value(self) -> float:
        return float(self.v)

    def partial_below(self, p) -> float:
        return float(self.v) if self.v < p else 0.0

    def support(self):
        return (self.v,)

    def atoms(self):
        return (float(self.v),)

    @property
    def upper(self) -> float:
        return float(self.v)

    def to_dict(self):
        return {"variant": "point", "v": _jsonable(self.v)}


@dataclass(frozen=True)
class DiscreteFinite(ValueDistribution):
    values: tuple
    probs: tuple

    def __post_init__(self):
        values, probs = tuple(self.values), tuple(self.probs)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)
        if not values or len(values) != len(probs):
            raise InputError("discrete distribution needs equally many values and probs (at least one)")
        for x in values:
            _nonneg("value", x)
        if any(b <= a for a, b in zip(values, values[1:])):
            raise InputError(f"discrete values must be strictly increasing: {list(values)}")
        if any(not q > 0 for q in probs):
            raise InputError("discrete probabilities must be positive")
        if abs(math.fsum(float(q) for q in probs) - 1.0) > 1e-12:
            raise InputError(f"discrete probabilities sum to {math.fsum(float(q) for q in probs)}, not 1")

    @property
    def _v(self) -> np.ndarray:
        return np.array([float(x) for x in self.values])

    @property
    def _q(self) -> np.ndarray:
        return np.array([float(q) for q in self.probs])

    def sample(self, rng, size=None):
        cum = np.cumsum(self._q)
        u = rng.random(size)
        idx = np.minimum(np.searchsorted(cum, u, side="right"), len(self.values) - 1)
        out = self._v[idx]
        return float(out) if size is None else out

    def tail_prob(self, p):
        v, q = self._v, self._q
        if np.ndim(p):
            return (q[None, :] * (v[None, :] > np.asarray(p, dtype=float)[..., None])).sum(-1)
        return math.fsum(q[v > p])

    def tail_prob_weak(self, p):
        v, q = self._v, self._q
        if np.ndim(p):
            return (q[None, :] * (v[None, :] >= np.asarray(p, dtype=float)[..., None])).sum(-1)
        return math.fsum(q[v >= p])

    @property
    def expected_value(self) -> float:
        return math.fsum(self._v * self._q)

    def partial_below(self, p) -> float:
        v, q = self._v, self._q
        return math.fsum((v * q)[v < p])

    def cte(self, p) -> float:
        v, q = self._v, self._q
        keep = v >= p
        mass = math.fsum(q[keep])
        if mass <= 0.0:
            raise UndefinedConditionalError(f"Pr[v >= {p}] = 0 under {self}")
        return math.fsum((v * q)[keep]) / mass

    def support(self):
        return self.values

    def atoms(self):
        return tuple(float(x) for x in self.values)

    @property
    def upper(self) -> float:
        return float(self.values[-1])

    def to_dict(self):
        return {
            "variant": "discrete",
            "values": [_jsonable(x) for x in self.values],
            "probs": [_jsonable(q) for q in self.probs],
        }


@dataclass(frozen=True)
class Uniform(ValueDistribution):
    a: float
    b: float

    def __post_init__(self):
        _nonneg("a", self.a)
        _nonneg("b", self.b)
        if self.a > self.b:
            raise InputError(f"uniform needs a <= b, got a={self.a}, b={self.b}")

    def sample(self, rng, size=None):
        return rng.uniform(float(self.a), float(self.b), size)

    def tail_prob(self, p):
        a, b = float(self.a), float(self.b)
        p = np.asarray(p, dtype=float)
        if a == b:
            out = (p < a).astype(float)
        else:
            out = np.clip((b - p) / (b - a), 0.0, 1.0)
        return out if out.ndim else float(out)

    def tail_prob_weak(self, p):
        if self.a == self.b:
            p = np.asarray(p, dtype=float)
            out = (p <= float(self.a)).astype(float)
            return out if out.ndim else float(out)
        return self.tail_prob(p)

    @property
    def expected_value(self) -> float:
        return (float(self.a) + float(self.b)) / 2.0

    def partial_below(self, p) -> float:
        a, b = float(self.a), float(self.b)
        if a == b:
            return a if a < p else 0.0
        hi = min(max(p, a), b)
        return (hi * hi - a * a) / (2.0 * (b - a))

    def cte(self, p) -> float:
        a, b = float(self.a), float(self.b)
        if self.tail_prob_weak(p) <= 0.0:
            raise UndefinedConditionalError(f"Pr[v >= {p}] = 0 under {self}")
        return (max(p, a) + b) / 2.0

    def support(self):
        if self.a == self.b:
            return (self.a,)
        return CONTINUOUS

    def atoms(self):
        return (float(self.a),) if self.a == self.b else ()

    @property
    def upper(self) -> float:
        return float(self.b)

    def to_dict(self):
        return {"variant": "uniform", "a": _jsonable(self.a), "b": _jsonable(self.b)}


@dataclass(frozen=True)
class Exponential(ValueDistribution):
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise InputError(f"exponential rate must be positive, got {self.rate}")

    def sample(self, rng, size=None):
        return rng.exponential(1.0 / float(self.rate), size)

    def tail_prob(self, p):
        p = np.asarray(p, dtype=float)
        out = np.where(p < 0, 1.0, np.exp(-float(self.rate) * np.maximum(p, 0.0)))
        return out if out.ndim else float(out)

    def tail_prob_weak(self, p):
        return self.tail_prob(p)

    @property
    def expected_value(self) -> float:
        return 1.0 / float(self.rate)

    def partial_below(self, p) -> float:
        lam = float(self.rate)
        if p <= 0:
            return 0.0
        return 1.0 / lam - (p + 1.0 / lam) * math.exp(-lam * p)

    def cte(self, p) -> float:
        return max(p, 0.0) + 1.0 / float(self.rate)

    @property
    def upper(self) -> float:
        return math.inf

    def to_dict(self):
        return {"variant": "exponential", "rate": _jsonable(self.rate)}


def _jsonable(x):
    if isinstance(x, Fraction):
        return f"{x.numerator}/{x.denominator}" if x.denominator != 1 else x.numerator
    return x


def to_fraction(x) -> Fraction:
    """Exact rational for a parameter; floats go through their decimal repr (``0.4 -> 2/5``)."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(repr(float(x)))


# -- function aliases ------------------------------------------------------------


def sample(dist: ValueDistribution, rng: np.random.Generator):
    return dist.sample(rng)


def tail_prob(dist: ValueDistribution, p):
    return dist.tail_prob(p)


def cte(dist: ValueDistribution, p) -> float:
    return dist.cte(p)


def support(dist: ValueDistribution):
    return dist.support()


# -- instances ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Instance:
    """``n`` independent bidders, one distribution each, under one feasibility system."""

    distributions: tuple[ValueDistribution, ...]
    feasibility: FeasibilitySystem
    name: str = "instance"

    def __post_init__(self):
        object.__setattr__(self, "distributions", tuple(self.distributions))
        if len(self.distributions) != self.feasibility.n:
            raise InputError(
                f"{len(self.distributions)} distributions for a feasibility system over {self.feasibility.n} bidders"
            )

    @property
    def n(self) -> int:
        return len(self.distributions)

    @property
    def k(self) -> int:
        return self.feasibility.k

    @property
    def expected_values(self) -> np.ndarray:
        return np.array([d.expected_value for d in self.distributions])

    @property
    def all_discrete(self) -> bool:
        return all(d.is_discrete for d in self.distributions)

    def _groups(self) -> list[tuple[ValueDistribution, list[int]]]:
        groups: dict = {}
        for i, d in enumerate(self.distributions):
            groups.setdefault(d, []).append(i)
        return list(groups.items())

    def sample_matrix(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """``size`` independent valuation profiles as a ``size x n`` array.

        Bidders with identical distributions are sampled together, in first-appearance order.
        """
        out = np.empty((size, self.n))
        for dist, idx in self._groups():
            out[:, idx] = dist.sample(rng, (size, len(idx)))
        return out

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.sample_matrix(rng, 1)[0]

    def joint_support_size(self) -> float:
        if not self.all_discrete:
            return math.inf
        return math.prod(len(d.support()) for d in self.distributions)

    def enumerate_joint(self) -> tuple[np.ndarray, np.ndarray]:
        """Every joint outcome of an all-discrete instance as (values matrix, probabilities)."""
        if not self.all_discrete:
            raise InputError("joint enumeration needs every distribution to be discrete")
        vals = [np.array([float(x) for x in d.support()]) for d in self.distributions]
        probs = [_probs_of(d) for d in self.distributions]
        grids = np.meshgrid(*[np.arange(len(v)) for v in vals], indexing="ij")
        idx = np.stack([g.ravel() for g in grids], axis=1)
        V = np.column_stack([vals[i][idx[:, i]] for i in range(self.n)])
        P = np.ones(idx.shape[0])
        for i in range(self.n):
            P = P * probs[i][idx[:, i]]
        return V, P

    def enumerate_joint_exact(self) -> Iterator[tuple[tuple[Fraction, ...], Fraction]]:
        """Exact rational version of :meth:`enumerate_joint`, one outcome at a time."""
        if not self.all_discrete:
            raise InputError("joint enumeration needs every distribution to be discrete")
        per = []
        for d in self.distributions:
            if isinstance(d, PointMass):
                per.append([(to_fraction(d.v), Fraction(1))])
            elif isinstance(d, Uniform):
                per.append([(to_fraction(d.a), Fraction(1))])
            else:
                per.append([(to_fraction(x), to_fraction(q)) for x, q in zip(d.values, d.probs)])
        for combo in itertools.product(*per):
            prob = Fraction(1)
            for _, q in combo:
                prob *= q
            yield tuple(x for x, _ in combo), prob


def _probs_of(d: ValueDistribution) -> np.ndarray:
    if isinstance(d, DiscreteFinite):
        return np.array([float(q) for q in d.probs])
    return np.ones(1)


def as_valuation(v: Sequence[float], n: int) -> np.ndarray:
    """Validate a valuation profile: length ``n``, finite, nonnegative."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.shape != (n,):
        raise InputError(f"valuation must have {n} entries, got shape {arr.shape}")
    if not np.isfinite(arr).all() or (arr < 0).any():
        raise InputError("valuation entries must be finite and nonnegative")
    return arr

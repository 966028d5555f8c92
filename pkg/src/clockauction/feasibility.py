"""Downward-closed feasibility systems.

Two representations are supported: an explicit antichain of maximal sets, and a
knapsack with per-bidder demands in (0, 1] and capacity 1.

Every optimisation query uses the same deterministic tie-break: larger total
weight first, then larger cardinality, then the lexicographically smallest
sorted index tuple. Weight ties are decided on ``math.fsum`` totals. That
makes the answer independent of summation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import CapacityError, InputError

MAXIMAL_SETS = "maximal_sets"
KNAPSACK = "knapsack"

DEFAULT_ENUM_CAP = 24
# knapsack sums are compared against capacity 1 with this slack
DEMAND_TOL = 1e-12
# knapsacks up to this size answer max-weight queries via their enumerated maximal sets
BATCH_KNAPSACK_N = 16


def canonical_order(sets: Iterable[Iterable[int]]) -> list[tuple[int, ...]]:
    """Sort sets by size descending, then lexicographically by sorted indices."""
    return sorted((tuple(sorted(s)) for s in sets), key=lambda s: (-len(s), s))


@dataclass(frozen=True, eq=False)
class FeasibilitySystem:
    """An immutable downward-closed set family over bidders ``0..n-1``.

    Build one with :meth:`from_sets` or :meth:`knapsack` rather than calling the
    constructor directly.
    """

    kind: str
    n: int
    maximal_sets: tuple[tuple[int, ...], ...] | None = None
    demands: tuple[float, ...] | None = None
    enum_cap: int = field(default=DEFAULT_ENUM_CAP, repr=False)

    def __post_init__(self):
        if self.kind == MAXIMAL_SETS:
            self._validate_sets()
        elif self.kind == KNAPSACK:
            self._validate_demands()
        else:
            raise InputError(f"unknown feasibility kind {self.kind!r}")

    # -- construction -------------------------------------------------------

    @classmethod
    def from_sets(cls, sets: Iterable[Iterable[int]], n: int | None = None) -> "FeasibilitySystem":
        sets = [tuple(int(i) for i in s) for s in sets]
        if n is None:
            n = 1 + max((max(s) for s in sets if s), default=-1)
        return cls(kind=MAXIMAL_SETS, n=int(n), maximal_sets=tuple(canonical_order(sets)))

    @classmethod
    def knapsack(cls, demands: Sequence[float], enum_cap: int = DEFAULT_ENUM_CAP) -> "FeasibilitySystem":
        demands = tuple(float(c) for c in demands)
        return cls(kind=KNAPSACK, n=len(demands), demands=demands, enum_cap=enum_cap)

    @classmethod
    def disjoint_groups(cls, sizes: Sequence[int]) -> "FeasibilitySystem":
        """Disjoint maximal sets of the given sizes over consecutive bidder indices."""
        sets, start = [], 0
        for s in sizes:
            sets.append(range(start, start + s))
            start += s
        return cls.from_sets(sets, n=start)

    def _validate_sets(self):
        if self.n < 1:
            raise InputError("feasibility system needs at least one bidder")
        sets = self.maximal_sets
        if not sets:
            raise InputError("at least one maximal set is required")
        as_frozen = []
        for s in sets:
            if not s:
                raise InputError("maximal sets must be nonempty")
            if len(set(s)) != len(s):
                raise InputError(f"duplicate index in maximal set {list(s)}")
            for i in s:
                if not 0 <= i < self.n:
                    raise InputError(f"bidder index {i} out of range [0, {self.n})")
            as_frozen.append(frozenset(s))
        for a in range(len(as_frozen)):
            for b in range(len(as_frozen)):
                if a != b and as_frozen[a] <= as_frozen[b]:
                    raise InputError(
                        f"maximal sets must form an antichain: {sorted(as_frozen[a])} "
                        f"is contained in {sorted(as_frozen[b])}"
                    )
        covered = frozenset().union(*as_frozen)
        missing = sorted(set(range(self.n)) - covered)
        if missing:
            raise InputError(f"bidders {missing} belong to no feasible set")

    def _validate_demands(self):
        if self.n < 1:
            raise InputError("feasibility system needs at least one bidder")
        for i, c in enumerate(self.demands):
            if not (0.0 < c <= 1.0) or math.isnan(c):
                raise InputError(f"demand c_{i}={c} must lie in (0, 1]")

    # -- structure ------------------------------------------------------------

    @cached_property
    def _sets(self) -> tuple[tuple[int, ...], ...]:
        if self.kind == MAXIMAL_SETS:
            return self.maximal_sets
        return tuple(canonical_order(_knapsack_maximal_sets(self.demands, self.n, self.enum_cap)))

    def enumerate_maximal_sets(self) -> list[tuple[int, ...]]:
        """The inclusion-maximal feasible sets in canonical order.

        For knapsack systems this is an exhaustive search, refused above ``enum_cap`` bidders.
        """
        return list(self._sets)

    @property
    def k(self) -> int:
        return len(self._sets)

    @cached_property
    def incidence(self) -> np.ndarray:
        """Boolean ``k x n`` membership matrix of the maximal sets."""
        m = np.zeros((self.k, self.n), dtype=bool)
        for r, s in enumerate(self._sets):
            m[r, list(s)] = True
        m.setflags(write=False)
        return m

    @cached_property
    def _incidence_f(self) -> np.ndarray:
        return self.incidence.astype(np.float64)

    @cached_property
    def _members(self) -> tuple[np.ndarray, ...]:
        return tuple(np.asarray(s, dtype=np.intp) for s in self._sets)

    @cached_property
    def max_set_size(self) -> int:
        """Size r of the largest feasible set."""
        if self.kind == KNAPSACK:
            return len(self.largest_feasible_subset(range(self.n)))
        return max(len(s) for s in self._sets)

    # -- queries --------------------------------------------------------------

    def _mask(self, subset: Iterable[int]) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        for i in subset:
            i = int(i)
            if not 0 <= i < self.n:
                raise InputError(f"bidder index {i} out of range [0, {self.n})")
            mask[i] = True
        return mask

    def is_feasible(self, subset: Iterable[int]) -> bool:
        return self.is_feasible_mask(self._mask(subset))

    def is_feasible_mask(self, mask: np.ndarray) -> bool:
        if not mask.any():
            return True
        if self.kind == KNAPSACK:
            return math.fsum(np.asarray(self.demands)[mask]) <= 1.0 + DEMAND_TOL
        outside = (~self.incidence) & mask
        return bool((~outside.any(axis=1)).any())

    def max_weight_feasible_subset(self, active: Iterable[int], weights: Sequence[float]) -> tuple[tuple[int, ...], float]:
        """Feasible subset of ``active`` of maximum total weight (global tie-break)."""
        mask = self._mask(active)
        w = self._weights(weights)
        if self.kind == KNAPSACK and self.n > BATCH_KNAPSACK_N:
            return _knapsack_branch_and_bound(self.demands, mask, w)
        chosen, totals = self.batch_max_weight(mask[None, :], w)
        members = tuple(int(i) for i in np.flatnonzero(chosen[0]))
        return members, math.fsum(w[list(members)])

    def branch_and_bound(self, active: Iterable[int], weights: Sequence[float]) -> tuple[tuple[int, ...], float]:
        """Knapsack max-weight query solved by branch-and-bound, without enumerating maximal sets."""
        if self.kind != KNAPSACK:
            raise InputError("branch_and_bound applies to knapsack systems only")
        return _knapsack_branch_and_bound(self.demands, self._mask(active), self._weights(weights))

    def largest_feasible_subset(self, active: Iterable[int]) -> tuple[int, ...]:
        return self.max_weight_feasible_subset(active, np.ones(self.n))[0]

    def _weights(self, weights) -> np.ndarray:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (self.n,):
            raise InputError(f"expected {self.n} weights, got shape {w.shape}")
        if (w < 0).any() or np.isnan(w).any():
            raise InputError("weights must be nonnegative")
        return w

    def batch_is_feasible(self, active: np.ndarray) -> np.ndarray:
        """Row-wise feasibility of a ``rows x n`` boolean matrix."""
        active = np.asarray(active, dtype=bool)
        if self.kind == KNAPSACK and self.n > BATCH_KNAPSACK_N:
            return np.array([self.is_feasible_mask(r) for r in active], dtype=bool)
        outside = active.astype(np.float64) @ self._outside_f
        return (outside == 0).any(axis=1)

    @cached_property
    def _outside_f(self) -> np.ndarray:
        return (~self.incidence).astype(np.float64).T

    @cached_property
    def _flat_members(self) -> tuple[np.ndarray, np.ndarray]:
        sizes = [m.size for m in self._members]
        return np.concatenate(self._members), np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.intp)

    def batch_max_weight(
        self, active: np.ndarray, weights: np.ndarray, integral: bool | None = None, totals: bool = True
    ) -> tuple[np.ndarray, np.ndarray | None]:
        """Vectorised :meth:`max_weight_feasible_subset` over rows of an active mask.

        ``weights`` is either one weight vector shared by all rows or a matrix with
        one row per active row. Returns the chosen subset masks and their totals.
        The result is identical, row by row, to the scalar query. Callers that know
        their weights are small integers may pass ``integral=True`` to skip the check.
        """
        active = np.asarray(active, dtype=bool)
        B = active.shape[0]
        w = np.asarray(weights, dtype=np.float64)
        shared = w.ndim == 1
        wm = np.where(active, w, 0.0)
        sums = wm @ self._incidence_f.T
        exact = integral or (integral is None and _is_integral(w))
        if exact:
            cand = sums == sums.max(axis=1, keepdims=True)
            if cand.sum() == B:
                # a unique heaviest set in every row needs no tie-break
                chosen = self.incidence[cand.argmax(axis=1)] & active
                return chosen, (np.where(chosen, w, 0.0).sum(axis=1) if totals else None)
        cards = active.astype(np.float64) @ self._incidence_f.T
        if shared and _is_uniform(w):
            # all weights equal: weight order is cardinality order
            best_w = cards.max(axis=1, keepdims=True)
            cand = cards == best_w
        elif exact:
            # integer weights below 2**53 sum exactly, so ties are exact
            cmax = np.where(cand, cards, -1.0).max(axis=1, keepdims=True)
            cand &= cards == cmax
        else:
            wmax = sums.max(axis=1, keepdims=True)
            tol = 1e-9 * (1.0 + np.abs(wmax))
            cand = sums >= wmax - tol
            multi = np.flatnonzero(cand.sum(axis=1) > 1)
            for r in multi:
                row_w = w if shared else w[r]
                idx = np.flatnonzero(cand[r])
                exact = [math.fsum(row_w[self._members[s]][active[r, self._members[s]]]) for s in idx]
                top = max(exact)
                cand[r] = False
                cand[r, idx[[e == top for e in exact]]] = True
            cmax = np.where(cand, cards, -1.0).max(axis=1, keepdims=True)
            cand &= cards == cmax
        choice = self._lex_resolve(active, cand)
        chosen = self.incidence[choice] & active
        if not totals:
            return chosen, None
        return chosen, np.where(chosen, w, 0.0).sum(axis=1)

    def _lex_resolve(self, active: np.ndarray, cand: np.ndarray) -> np.ndarray:
        """Pick, per row, the candidate set whose intersection with ``active`` is lexicographically smallest."""
        B, k = cand.shape
        choice = cand.argmax(axis=1)
        multi = cand.sum(axis=1) > 1
        if not multi.any():
            return choice
        rows = np.flatnonzero(multi)
        flat, offsets = self._flat_members
        # members are sorted, so the segment minimum is the first active member
        first = np.minimum.reduceat(np.where(active[rows][:, flat], flat, self.n), offsets, axis=1)
        first = np.where(cand[rows], first, self.n + 1)
        fmin = first.min(axis=1, keepdims=True)
        tied = first == fmin
        choice[rows] = tied.argmax(axis=1)
        for j in np.flatnonzero((tied.sum(axis=1) > 1) & (fmin[:, 0] < self.n)):
            r = rows[j]
            best = None
            for s in np.flatnonzero(tied[j]):
                key = tuple(self._members[s][active[r, self._members[s]]])
                if best is None or key < best[0]:
                    best = (key, s)
            choice[r] = best[1]
        return choice


def _is_integral(w: np.ndarray) -> bool:
    return bool((w == np.floor(w)).all()) and (w.size == 0 or float(w.max()) * w.shape[-1] < 2.0**52)


def _is_uniform(w: np.ndarray) -> bool:
    return w.size == 0 or bool((w == w[0]).all())


def _better(weight: float, members: tuple[int, ...], best) -> bool:
    if best is None:
        return True
    bw, bm = best
    if weight != bw:
        return weight > bw
    if len(members) != len(bm):
        return len(members) > len(bm)
    return members < bm


def _knapsack_branch_and_bound(demands, mask: np.ndarray, w: np.ndarray) -> tuple[tuple[int, ...], float]:
    """Exact max-weight knapsack over active bidders with the global tie-break.

    Branches include-first over items sorted by weight density; prunes with the
    fractional relaxation on weight and a count bound for cardinality ties.
    """
    items = [int(i) for i in np.flatnonzero(mask)]
    items.sort(key=lambda i: (-(w[i] / demands[i]), i))
    c = [demands[i] for i in items]
    v = [float(w[i]) for i in items]
    m = len(items)
    best = [None]

    def bound(pos: int, room: float) -> float:
        total = 0.0
        for j in range(pos, m):
            if c[j] <= room:
                room -= c[j]
                total += v[j]
            else:
                total += v[j] * room / c[j]
                break
        return total

    def dfs(pos: int, chosen: list[int], used: list[float], weight: float):
        if pos == m:
            members = tuple(sorted(items[j] for j in chosen))
            exact = math.fsum(v[j] for j in chosen)
            if _better(exact, members, best[0]):
                best[0] = (exact, members)
            return
        if best[0] is not None:
            bw, bm = best[0]
            room = 1.0 - math.fsum(used)
            ub = weight + bound(pos, max(room, 0.0))
            slack = 1e-9 * (1.0 + abs(bw))
            if ub < bw - slack:
                return
            if ub <= bw and len(chosen) + (m - pos) < len(bm):
                return
        if math.fsum(used) + c[pos] <= 1.0 + DEMAND_TOL:
            chosen.append(pos)
            used.append(c[pos])
            dfs(pos + 1, chosen, used, weight + v[pos])
            chosen.pop()
            used.pop()
        dfs(pos + 1, chosen, used, weight)

    dfs(0, [], [], 0.0)
    weight, members = best[0]
    return members, weight


def _knapsack_maximal_sets(demands, n: int, cap: int) -> list[tuple[int, ...]]:
    if n > cap:
        raise CapacityError(
            f"exhaustive maximal-set search refused for a {n}-bidder knapsack (cap {cap}); "
            "give the instance as explicit maximal sets instead"
        )
    suffix = [0.0] * (n + 1)
    for i in range(n - 1, -1, -1):
        suffix[i] = suffix[i + 1] + demands[i]
    out: list[tuple[int, ...]] = []

    def dfs(i: int, chosen: list[int], used: float, min_excluded: float):
        slack = 1.0 - used
        if slack - suffix[i] >= min_excluded - DEMAND_TOL:
            # even taking every remaining item leaves room for an excluded one
            return
        if i == n:
            out.append(tuple(chosen))
            return
        total = math.fsum([demands[j] for j in chosen] + [demands[i]])
        if total <= 1.0 + DEMAND_TOL:
            chosen.append(i)
            dfs(i + 1, chosen, total, min_excluded)
            chosen.pop()
        dfs(i + 1, chosen, used, min(min_excluded, demands[i]))

    dfs(0, [], 0.0, math.inf)
    return out


# Function-style aliases so callers can write ``is_feasible(system, subset)``.
is_feasible = FeasibilitySystem.is_feasible
enumerate_maximal_sets = FeasibilitySystem.enumerate_maximal_sets
max_weight_feasible_subset = FeasibilitySystem.max_weight_feasible_subset
largest_feasible_subset = FeasibilitySystem.largest_feasible_subset

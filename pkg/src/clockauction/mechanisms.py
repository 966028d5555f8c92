"""Clock auctions as transcript-producing procedures.

Every mechanism has two entry points that agree outcome for outcome:

* ``run(v, trial)`` drives a :class:`~clockauction.engine.ClockAuction` and returns a full transcript;
* ``run_batch(V, first_trial)`` computes served sets and payments for many profiles at once.

The batch path exists for Monte-Carlo sweeps. Tests pin it to the transcript path.
Per-trial randomness comes from ``stream(seed, MECH_KEY, trial)``, so both paths see the same coins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import bayes as B
from .engine import ClockAuction, Transcript
from .errors import InputError, NonTerminationError
from .feasibility import FeasibilitySystem
from .stats import Estimate, expectation, stream
from .valuation import Instance

MECH_KEY = 7
MECHANISMS = (
    "theorem1",
    "theorem1_r",
    "mechanism2",
    "wfca",
    "sampling",
    "hedging",
    "bounded_support",
    "binary_optimal",
)


# -- configuration ----------------------------------------------------------------


@dataclass(frozen=True)
class MechanismConfig:
    """Knobs shared by all mechanisms. ``None`` fields are resolved from the instance."""

    delta_step: float | None = None
    epsilon: float | None = None
    price_cap: float | None = None
    seed: int = 0
    order: tuple[int, ...] | None = None
    sampling_grid: bool = False
    estimator_trials: int = 20_000
    alpha: float | None = None

    def __post_init__(self):
        for name in ("delta_step", "epsilon", "price_cap"):
            x = getattr(self, name)
            if x is not None and not x > 0:
                raise InputError(f"{name} must be positive")
        if self.estimator_trials < 1:
            raise InputError("estimator_trials must be >= 1")

    def resolved(self, instance: Instance) -> "MechanismConfig":
        step = default_step(instance)
        order = tuple(range(instance.n)) if self.order is None else tuple(int(i) for i in self.order)
        if sorted(order) != list(range(instance.n)):
            raise InputError("order must be a permutation of the bidders")
        return replace(
            self,
            delta_step=self.delta_step or step,
            epsilon=self.epsilon or step,
            price_cap=self.price_cap or default_price_cap(instance),
            order=order,
        )

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["order"] = None if self.order is None else list(self.order)
        return d


def default_step(instance: Instance) -> float:
    """0.01 times the smallest positive gap between support points (1 when there is none)."""
    pts = sorted({float(a) for d in instance.distributions for a in d.atoms()})
    gaps = [b - a for a, b in zip(pts, pts[1:]) if b > a]
    return 0.01 * (min(gaps) if gaps else 1.0)


def default_price_cap(instance: Instance) -> float:
    caps = []
    for d in instance.distributions:
        u = d.upper
        caps.append(u if math.isfinite(u) else 50.0 * max(d.expected_value, 1e-12))
    return max(max(caps), 1e-12)


# -- shared helpers ---------------------------------------------------------------


@dataclass
class BatchOutcome:
    served: np.ndarray
    payments: np.ndarray
    info: dict = field(default_factory=dict)

    def welfare(self, V: np.ndarray) -> np.ndarray:
        return np.where(self.served, V, 0.0).sum(axis=1)

    def revenue(self) -> np.ndarray:
        return self.payments.sum(axis=1)


def grid_index(v, eps: float):
    """Largest integer ``x`` with ``x * eps <= v``, computed so the product test is exact."""
    v = np.asarray(v, dtype=np.float64)
    x = np.floor(v / eps)
    x = np.where(x * eps > v, x - 1, x)
    x = np.where((x + 1) * eps <= v, x + 1, x)
    return x.astype(np.int64)


def drop_round(v, delta: float):
    """Smallest ``j >= 1`` with ``j * delta > v``."""
    return grid_index(v, delta) + 1


def _rng(seed_or_rng, *keys) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return stream(int(seed_or_rng), *keys)


class MaxPriceWeight:
    """Serve the accepters' feasible subset of largest total price."""

    def __repr__(self):
        return "MaxPriceWeight()"


@dataclass(frozen=True)
class FixedPreferredSet:
    members: tuple[int, ...]


def _selection_name(sel) -> str:
    return "max_price_weight" if isinstance(sel, MaxPriceWeight) else "fixed_set"


def single_price_batch(system: FeasibilitySystem, V: np.ndarray, prices: np.ndarray, selection) -> BatchOutcome:
    prices = np.asarray(prices, dtype=np.float64)
    accepted = V >= prices[None, :]
    if isinstance(selection, FixedPreferredSet):
        mask = np.zeros(system.n, dtype=bool)
        mask[list(selection.members)] = True
        served = accepted & mask[None, :]
    else:
        served, _ = system.batch_max_weight(accepted, prices)
    return BatchOutcome(served, np.where(served, prices[None, :], 0.0))


def run_single_price(
    instance: Instance,
    valuation: Sequence[float],
    prices: Sequence[float],
    selection=None,
    order: Sequence[int] | None = None,
    record: bool = True,
    mechanism: str = "single_price",
    meta: dict | None = None,
) -> Transcript:
    """One round of posted prices, then a deferred choice among the accepters."""
    system = instance.feasibility
    selection = MaxPriceWeight() if selection is None else selection
    prices = np.asarray(prices, dtype=np.float64)
    if prices.shape != (system.n,) or (prices < 0).any():
        raise InputError("prices must be a nonnegative vector with one entry per bidder")
    if isinstance(selection, FixedPreferredSet) and not system.is_feasible(selection.members):
        raise InputError(f"preferred set {list(selection.members)} is infeasible")
    order = np.arange(system.n) if order is None else np.asarray(order)
    state = ClockAuction(valuation, system, mechanism, record)
    state.offer_round(order, prices[order])
    out = single_price_batch(system, np.asarray(valuation, dtype=np.float64)[None, :], prices, selection)
    m = {"selection": _selection_name(selection)}
    m.update(meta or {})
    return state.finalize(np.flatnonzero(out.served[0]), m)


# -- price-ladder auctions --------------------------------------------------------


@dataclass(frozen=True)
class Candidate:
    name: str
    prices: np.ndarray
    selection: object
    estimate: Estimate | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "prices": self.prices.tolist(),
            "selection": _selection_name(self.selection),
            "estimate": None if self.estimate is None else self.estimate.to_dict(),
        }


class CandidateAuction:
    """A chosen single-price candidate plus the runner for it."""

    def __init__(self, name: str, instance: Instance, candidates: list[Candidate], chosen: int, config: MechanismConfig, params: dict):
        self.name = name
        self.instance = instance
        self.candidates = candidates
        self.chosen_index = chosen
        self.config = config
        self.params = params

    @property
    def chosen(self) -> Candidate:
        return self.candidates[self.chosen_index]

    def run(self, v, trial: int = 0, record: bool = True) -> Transcript:
        c = self.chosen
        return run_single_price(
            self.instance, v, c.prices, c.selection, self.config.order, record, self.name, {"candidate": c.name}
        )

    def run_batch(self, V: np.ndarray, first_trial: int = 0) -> BatchOutcome:
        c = self.chosen
        return single_price_batch(self.instance.feasibility, V, c.prices, c.selection)

    def describe(self) -> dict:
        return {"chosen": self.chosen.name, "candidates": [c.to_dict() for c in self.candidates], **self.params}


def _pick(candidates: list[Candidate], key) -> int:
    """Index of the first candidate with the largest estimate."""
    best = 0
    for i, c in enumerate(candidates):
        if key(c) > key(candidates[best]):
            best = i
    return best


def _estimate_candidates(instance: Instance, cands: list[Candidate], objective: str, trials: int, seed: int, exact=None):
    system = instance.feasibility

    def f(V):
        out = []
        for c in cands:
            o = single_price_batch(system, V, c.prices, c.selection)
            out.append(o.welfare(V) if objective == "welfare" else o.revenue())
        return tuple(out)

    ests = expectation(instance, f, trials, seed, exact=exact, purpose=4)
    return [replace(c, estimate=e) for c, e in zip(cands, ests)]


def ladder_candidates(instance: Instance, delta: float, m: int) -> list[Candidate]:
    """Zero-price candidate on the best expected set, then uniform prices ``delta * 2**(1-j)`` for ``j = 0..ceil(log2 m)``."""
    n = instance.n
    best_set, _ = instance.feasibility.max_weight_feasible_subset(range(n), instance.expected_values)
    cands = [Candidate("zero_price", np.zeros(n), FixedPreferredSet(best_set))]
    if delta > 0:
        for j in range(0, math.ceil(math.log2(m) - 1e-12) + 1):
            p = delta * 2.0 ** (1 - j)
            cands.append(Candidate(f"uniform_j{j}", np.full(n, p), MaxPriceWeight()))
    return cands


def ladder_auction(name, instance, delta, m, config, trials, seed, params, exact=None) -> CandidateAuction:
    cands = _estimate_candidates(instance, ladder_candidates(instance, delta, m), "welfare", trials, seed, exact)
    chosen = _pick(cands, lambda c: c.estimate.value)
    return CandidateAuction(name, instance, cands, chosen, config, params)


def run_theorem1_auction(
    instance: Instance,
    bayes: B.BayesParams | None = None,
    trials: int = 20_000,
    seed: int = 0,
    config: MechanismConfig | None = None,
    exact: bool | None = None,
) -> CandidateAuction:
    """Best of the zero-price auction and the uniform-price ladder built on Delta."""
    config = (config or MechanismConfig(seed=seed)).resolved(instance)
    if bayes is None:
        bayes = B.bayes_params(instance, trials, seed, exact=exact)
    delta = bayes.delta.value if bayes.delta is not None else 0.0
    return ladder_auction("theorem1", instance, delta, bayes.m, config, trials, seed, {"bayes": bayes.to_dict()}, exact)


def run_theorem1_variant_r(
    instance: Instance,
    opt_estimate: Estimate | float | None = None,
    r: int | None = None,
    trials: int = 20_000,
    seed: int = 0,
    config: MechanismConfig | None = None,
    exact: bool | None = None,
) -> CandidateAuction:
    """The same ladder with Delta = OPT and m = r, the size of the largest feasible set."""
    config = (config or MechanismConfig(seed=seed)).resolved(instance)
    if opt_estimate is None:
        opt_estimate = B.estimate_opt(instance, trials, seed, exact=exact)
    opt = opt_estimate.value if isinstance(opt_estimate, Estimate) else float(opt_estimate)
    r = instance.feasibility.max_set_size if r is None else int(r)
    if r < 1:
        raise InputError("r must be >= 1")
    return ladder_auction("theorem1_r", instance, opt, r, config, trials, seed, {"opt_estimate": opt, "r": r}, exact)


# -- bounded support and binary ---------------------------------------------------


def support_table(instance: Instance) -> np.ndarray:
    """``n x l`` matrix of increasing support points, short supports padded with their top value."""
    sups = []
    for i, d in enumerate(instance.distributions):
        if not d.is_discrete:
            raise InputError(f"bidder {i} has a continuous distribution; bounded support needs finite supports")
        sups.append([float(x) for x in d.support()])
    ell = max(len(s) for s in sups)
    return np.array([s + [s[-1]] * (ell - len(s)) for s in sups])


def run_bounded_support(
    instance: Instance,
    trials: int = 20_000,
    seed: int = 0,
    config: MechanismConfig | None = None,
    exact: bool | None = None,
) -> CandidateAuction:
    """Best-revenue auction among the ``l`` support-level price vectors."""
    config = (config or MechanismConfig(seed=seed)).resolved(instance)
    theta = support_table(instance)
    cands = [Candidate(f"level_{j + 1}", theta[:, j].copy(), MaxPriceWeight()) for j in range(theta.shape[1])]
    cands = _estimate_candidates(instance, cands, "revenue", trials, seed, exact)
    chosen = _pick(cands, lambda c: c.estimate.value)
    return CandidateAuction("bounded_support", instance, cands, chosen, config, {"ell": int(theta.shape[1])})


def _check_binary(V: np.ndarray) -> None:
    if not np.isin(V, (0.0, 1.0)).all():
        raise InputError("binary_optimal needs every value in {0, 1}")


class BinaryOptimal:
    name = "binary_optimal"

    def __init__(self, instance: Instance, config: MechanismConfig):
        self.instance = instance
        self.config = config

    def run(self, v, trial: int = 0, record: bool = True) -> Transcript:
        return run_binary_optimal(self.instance, v, self.config.order, record)

    def run_batch(self, V, first_trial: int = 0) -> BatchOutcome:
        _check_binary(V)
        system = self.instance.feasibility
        half = np.full(system.n, 0.5)
        served, _ = system.batch_max_weight(V >= 0.5, np.ones(system.n))
        return BatchOutcome(served, np.where(served, half[None, :], 0.0))

    def describe(self) -> dict:
        return {"price": 0.5}


def run_binary_optimal(instance: Instance, valuation, order=None, record: bool = True) -> Transcript:
    """Price 1/2 to everyone, then serve the largest feasible set of accepters."""
    v = np.asarray(valuation, dtype=np.float64)
    _check_binary(v[None, :])
    system = instance.feasibility
    order = np.arange(system.n) if order is None else np.asarray(order)
    state = ClockAuction(v, system, "binary_optimal", record)
    state.offer_round(order, np.full(system.n, 0.5))
    served = system.largest_feasible_subset(np.flatnonzero(v >= 0.5))
    return state.finalize(served, {"price": 0.5})


# -- Mechanism 2: uniform ascending price with limited information --------------


def loglog_guard(k: int) -> float:
    if k <= 2:
        return 1.0
    return max(1.0, math.log2(math.log2(k)))


class Mechanism2:
    """Zero-price shortcut when one set's expected value is large, otherwise a uniform ascending clock.

    The clock rises by ``delta`` per round. Offers within a round go one bidder at a
    time in ``config.order``. The auction stops as soon as a rejection leaves a
    feasible active set (feasible exit: serve everyone still active at their last
    accepted price). Otherwise it stops at the end of the first round where the
    largest feasible subset L of the active set satisfies ``|L| * p >= g`` (goal
    exit: serve L at price p).
    """

    name = "mechanism2"

    def __init__(self, instance: Instance, params: B.BayesParams, config: MechanismConfig):
        self.instance = instance
        self.params = params
        self.config = config
        system = instance.feasibility
        self.expected_set, best = system.max_weight_feasible_subset(range(system.n), instance.expected_values)
        self.guard_threshold = params.opt_estimate.value / loglog_guard(system.k)
        self.zero_price = best >= self.guard_threshold
        self.pos = np.empty(system.n, dtype=np.int64)
        self.pos[np.asarray(config.order)] = np.arange(system.n)

    def describe(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "zero_price_branch": bool(self.zero_price),
            "expected_set": list(self.expected_set),
            "guard_threshold": self.guard_threshold,
        }

    def _meta(self, reason: str, price: float) -> dict:
        return {"exit_reason": reason, "price": price, "goal": self.params.goal}

    def run(self, v, trial: int = 0, record: bool = True) -> Transcript:
        system = self.instance.feasibility
        v = np.asarray(v, dtype=np.float64)
        state = ClockAuction(v, system, self.name, record)
        if self.zero_price:
            return state.finalize(self.expected_set, self._meta("zero_price", 0.0))
        delta, goal = self.config.delta_step, self.params.goal
        order = np.asarray(self.config.order)
        cap = self.config.price_cap
        j = 0
        while True:
            j += 1
            p = j * delta
            if p > cap + 2 * delta:
                raise NonTerminationError(f"uniform price {p} passed the cap {cap}", state.finalize([], {}))
            live = order[state.active[order]]
            rejects = np.flatnonzero(p > v[live])
            cut = live.size
            mask = state.active.copy()
            for q in rejects:
                mask[live[q]] = False
                if system.is_feasible_mask(mask):
                    cut = q + 1
                    break
            state.offer_round(live[:cut], p)
            if cut < live.size or system.is_feasible_mask(state.active):
                return state.finalize(state.active_indices(), self._meta("feasible", p))
            best = system.largest_feasible_subset(state.active_indices())
            if len(best) * p >= goal:
                return state.finalize(best, self._meta("goal", p))

    def run_batch(self, V: np.ndarray, first_trial: int = 0) -> BatchOutcome:
        system = self.instance.feasibility
        rows, n = V.shape
        if self.zero_price:
            served = np.zeros((rows, n), dtype=bool)
            served[:, list(self.expected_set)] = True
            return BatchOutcome(served, np.zeros((rows, n)), {"exit_reason": np.array(["zero_price"] * rows)})
        delta, goal = self.config.delta_step, self.params.goal
        D = drop_round(V, delta)
        if (D.max() - 1) * delta > self.config.price_cap + delta:
            raise NonTerminationError("a value exceeds the price cap", None)
        # position of each bidder in the global drop sequence, ordered by (round, offer order)
        key = D * n + self.pos[None, :]
        rank = np.empty_like(key)
        np.put_along_axis(rank, np.argsort(key, axis=1), np.arange(1, n + 1)[None, :], axis=1)
        # first prefix of the drop sequence that leaves a feasible active set
        inc = system.incidence
        e_star = np.full(rows, n, dtype=np.int64)
        for s in range(system.k):
            out = ~inc[s]
            worst = rank[:, out].max(axis=1) if out.any() else np.zeros(rows, dtype=np.int64)
            np.minimum(e_star, worst, out=e_star)
        r_idx = np.arange(rows)
        # a rejection that leaves a feasible set ends the auction on the spot; when N itself
        # is feasible that is the first rejection, or the end of round 1 if nobody rejects
        first = np.argmax(rank == 1, axis=1)
        e_eff = np.where((e_star == 0) & (D[r_idx, first] == 1), 1, e_star)
        trigger = np.argmax(rank == np.maximum(e_eff, 1)[:, None], axis=1)
        j_feas = np.where(e_eff == 0, 1, D[r_idx, trigger])
        j_goal = np.full(rows, np.iinfo(np.int64).max)
        for members in system._members:
            np.minimum(j_goal, _goal_round(D[:, members], delta, goal), out=j_goal)
        is_goal = j_goal < j_feas
        served = np.zeros((rows, n), dtype=bool)
        payments = np.zeros((rows, n))
        reason = np.where(is_goal, "goal", "feasible")
        f = ~is_goal
        if f.any():
            # feasible exit: survivors of the drop prefix; bidders after the trigger in
            # offer order were not reached in the exit round and keep the previous price
            jf = j_feas[f]
            served[f] = rank[f] > e_eff[f][:, None]
            trig_pos = np.where(e_eff[f] == 0, n, self.pos[trigger[f]])
            reached = self.pos[None, :] <= trig_pos[:, None]
            price = np.where(reached, jf[:, None] * delta, (jf[:, None] - 1) * delta)
            payments[f] = np.where(served[f], price, 0.0)
        if is_goal.any():
            jg = j_goal[is_goal]
            alive = D[is_goal] > jg[:, None]
            best, _ = system.batch_max_weight(alive, np.ones(n))
            served[is_goal] = best
            payments[is_goal] = np.where(best, (jg * delta)[:, None], 0.0)
        return BatchOutcome(served, payments, {"exit_reason": reason})


def _goal_round(D: np.ndarray, delta: float, goal: float) -> np.ndarray:
    """Per row, the first round ``j`` after which ``#{D > j} * (j * delta) >= goal`` for one set.

    With ``d_(c)`` the c-th largest drop round, at least ``c`` members survive round ``j``
    iff ``j < d_(c)``. So the answer is the least ``j_c`` over counts ``c`` where ``j_c`` is the
    first round with ``c * j * delta >= goal`` and ``j_c < d_(c)``.
    """
    rows, s = D.shape
    big = np.iinfo(np.int64).max
    if s == 0:
        return np.full(rows, big)
    if not math.isfinite(goal):
        return np.full(rows, big)
    Dd = -np.sort(-D, axis=1)
    c = np.arange(1, s + 1, dtype=np.float64)
    # rounds as floats; anything beyond the last drop round can never qualify
    limit = float(Dd[:, 0].max()) + 1.0
    j = np.minimum(np.maximum(1.0, np.ceil(goal / (c * delta))), limit) if goal > 0 else np.ones(s)
    for _ in range(3):
        j = np.where((j < limit) & (c * (j * delta) < goal), j + 1, j)
    for _ in range(3):
        j = np.where((j > 1) & (c * ((j - 1) * delta) >= goal), j - 1, j)
    ok = j[None, :] < Dd
    return np.where(ok, j[None, :], 2.0**62).min(axis=1).astype(np.int64)


def run_mechanism2(
    instance: Instance,
    bayes: B.BayesParams | None,
    valuation,
    config: MechanismConfig | None = None,
    record: bool = True,
) -> Transcript:
    config = (config or MechanismConfig()).resolved(instance)
    if bayes is None:
        bayes = B.mechanism2_params(
            instance, B.estimate_opt(instance, config.estimator_trials, config.seed), alpha_override=config.alpha
        )
    return Mechanism2(instance, bayes, config).run(valuation, record=record)


# -- WFCA -------------------------------------------------------------------------


def wfca_batch(system: FeasibilitySystem, V: np.ndarray, eps: float, cap: float, on_round=None) -> tuple[np.ndarray, np.ndarray]:
    """Water-filling on integer grid counts for every row at once.

    Returns the final active masks (= served sets) and the grid counts of the clocks.
    ``on_round(row_ids, raised_mask, price_per_row)`` sees every batch of offers in order.
    """
    rows, n = V.shape
    X = np.zeros((rows, n), dtype=np.int64)
    A = np.ones((rows, n), dtype=bool)
    live = np.flatnonzero(~system.batch_is_feasible(A))
    big = np.iinfo(np.int64).max
    xcap = int(grid_index(cap, eps)) + 2
    # state is kept for live rows only and written back as rows finish
    a, x, v = A[live], X[live], V[live]
    while live.size:
        W, _ = system.batch_max_weight(a, x.astype(np.float64), integral=True, totals=False)
        losers = a & ~W
        level = np.where(losers, x, big).min(axis=1)
        if (level >= xcap).any():
            raise NonTerminationError(f"WFCA clock passed the cap {cap}", None)
        raised = losers & (x == level[:, None])
        price = (level + 1) * eps
        if on_round is not None:
            on_round(live, raised, price)
        x += raised
        a &= ~(raised & (price[:, None] > v))
        done = system.batch_is_feasible(a)
        if done.any():
            A[live[done]], X[live[done]] = a[done], x[done]
            keep = ~done
            live, a, x, v = live[keep], a[keep], x[keep], v[keep]
    return A, X


class WFCA:
    """Water-filling clock auction on the price grid ``{x * epsilon}``."""

    name = "wfca"

    def __init__(self, instance: Instance, config: MechanismConfig):
        self.instance = instance
        self.config = config

    def describe(self) -> dict:
        return {"epsilon": self.config.epsilon}

    def run(self, v, trial: int = 0, record: bool = True) -> Transcript:
        system = self.instance.feasibility
        v = np.asarray(v, dtype=np.float64)
        state = ClockAuction(v, system, self.name, record)
        order = np.asarray(self.config.order)

        def offer(_, raised, price):
            who = order[raised[0][order]]
            state.offer_round(who, price[0])

        try:
            wfca_batch(system, v[None, :], self.config.epsilon, self.config.price_cap, offer)
        except NonTerminationError as e:
            raise NonTerminationError(str(e), state.finalize([], {})) from None
        return state.finalize(state.active_indices(), {"epsilon": self.config.epsilon})

    def run_many(self, V: np.ndarray, first_trial: int = 0, record: bool = True) -> list[Transcript]:
        """Transcripts for every row of ``V``, equal to calling :meth:`run` row by row."""
        system = self.instance.feasibility
        V = np.asarray(V, dtype=np.float64)
        states = [ClockAuction(v, system, self.name, record) for v in V]
        order = np.asarray(self.config.order)

        def offer(ids, raised, price):
            for j, r in enumerate(ids):
                states[r].offer_round(order[raised[j][order]], price[j])

        try:
            wfca_batch(system, V, self.config.epsilon, self.config.price_cap, offer)
        except NonTerminationError:
            # rerun row by row so the error carries the offending transcript
            return [self.run(v, first_trial + r, record) for r, v in enumerate(V)]
        meta = {"epsilon": self.config.epsilon}
        return [st.finalize(st.active_indices(), dict(meta)) for st in states]

    def run_batch(self, V: np.ndarray, first_trial: int = 0) -> BatchOutcome:
        eps = self.config.epsilon
        A, X = wfca_batch(self.instance.feasibility, V, eps, self.config.price_cap)
        return BatchOutcome(A, np.where(A, X * eps, 0.0))


def run_wfca(instance: Instance, valuation, config: MechanismConfig | None = None, record: bool = True) -> Transcript:
    config = (config or MechanismConfig()).resolved(instance)
    return WFCA(instance, config).run(valuation, record=record)


# -- sampling and hedging ---------------------------------------------------------


@dataclass(frozen=True)
class SamplingState:
    sampled: tuple[int, ...]
    unsampled: tuple[int, ...]
    chosen: tuple[int, ...]

    def to_dict(self) -> dict:
        return {"sampled": list(self.sampled), "unsampled": list(self.unsampled), "chosen": list(self.chosen)}


def sampling_choice(system: FeasibilitySystem, revealed: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Index of the first maximal set with the largest revealed sampled value, per row."""
    sums = np.stack([np.where(T[:, m], revealed[:, m], 0.0).sum(axis=1) for m in system._members], axis=1)
    return sums.argmax(axis=1)


class Sampling:
    """Exhaust a random half of the bidders, then serve the unsampled part of the best-looking set at price 0."""

    name = "sampling"

    def __init__(self, instance: Instance, config: MechanismConfig):
        self.instance = instance
        self.config = config

    def describe(self) -> dict:
        return {"grid": self.config.sampling_grid}

    def mask_for(self, trial: int) -> np.ndarray:
        return draw_mask(stream(self.config.seed, MECH_KEY, trial), self.instance.n)

    def _revealed(self, V: np.ndarray) -> np.ndarray:
        if not self.config.sampling_grid:
            return V
        return grid_index(V, self.config.epsilon) * self.config.epsilon

    def run(self, v, trial: int = 0, record: bool = True, mask=None, meta=None) -> Transcript:
        return self.run_with_state(v, trial, record, mask, meta)[0]

    def run_with_state(self, v, trial: int = 0, record: bool = True, mask=None, meta=None):
        system = self.instance.feasibility
        v = np.asarray(v, dtype=np.float64)
        T = self.mask_for(trial) if mask is None else np.asarray(mask, dtype=bool)
        state = ClockAuction(v, system, self.name, record)
        order = np.asarray(self.config.order)
        who = order[T[order]]
        if self.config.sampling_grid:
            eps = self.config.epsilon
            x = 0
            while who.size:
                x += 1
                acc = state.offer_round(who, x * eps)
                who = who[acc]
        elif who.size:
            state.offer_round(who, v[who])
            state.offer_round(who, np.nextafter(v[who], np.inf))
        rev = self._revealed(v[None, :])[0]
        for i in np.flatnonzero(T):
            state.reveal(i, rev[i])
        s = int(sampling_choice(system, rev[None, :], T[None, :])[0])
        R = system.enumerate_maximal_sets()[s]
        served = [i for i in R if not T[i]]
        info = SamplingState(
            sampled=tuple(np.flatnonzero(T).tolist()), unsampled=tuple(np.flatnonzero(~T).tolist()), chosen=tuple(R)
        )
        m = {"sampling": info.to_dict()}
        m.update(meta or {})
        return state.finalize(served, m), info

    def run_batch(self, V: np.ndarray, first_trial: int = 0, masks=None) -> BatchOutcome:
        system = self.instance.feasibility
        if masks is None:
            masks = np.stack([self.mask_for(first_trial + r) for r in range(V.shape[0])]) if V.shape[0] else np.zeros(V.shape, bool)
        s = sampling_choice(system, self._revealed(V), masks)
        served = system.incidence[s] & ~masks
        return BatchOutcome(served, np.zeros(V.shape))


def draw_mask(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.random(n) < 0.5


def run_sampling(instance: Instance, valuation, rng=0, mask=None, config: MechanismConfig | None = None, record: bool = True):
    """Returns the transcript and the sampling state. ``rng`` is a seed or a generator; ``mask`` fixes T."""
    config = (config or MechanismConfig()).resolved(instance)
    mech = Sampling(instance, config)
    if mask is None:
        mask = draw_mask(_rng(rng), instance.n)
    return mech.run_with_state(valuation, record=record, mask=mask)


class Hedging:
    """One fair coin: heads runs WFCA, tails runs the sampling auction on the same stream."""

    name = "hedging"

    def __init__(self, instance: Instance, config: MechanismConfig):
        self.instance = instance
        self.config = config
        self.wfca = WFCA(instance, config)
        self.sampling = Sampling(instance, config)

    def describe(self) -> dict:
        return {"epsilon": self.config.epsilon}

    def draw(self, rng: np.random.Generator):
        heads = bool(rng.random() < 0.5)
        return heads, (None if heads else draw_mask(rng, self.instance.n))

    def run(self, v, trial: int = 0, record: bool = True, rng=None) -> Transcript:
        heads, mask = self.draw(stream(self.config.seed, MECH_KEY, trial) if rng is None else _rng(rng))
        if heads:
            t = self.wfca.run(v, trial, record)
            return replace(t, mechanism=self.name, meta={**t.meta, "coin": "wfca"})
        t = self.sampling.run(v, trial, record, mask=mask, meta={"coin": "sampling"})
        return replace(t, mechanism=self.name)

    def run_batch(self, V: np.ndarray, first_trial: int = 0) -> BatchOutcome:
        rows, n = V.shape
        draws = [self.draw(stream(self.config.seed, MECH_KEY, first_trial + r)) for r in range(rows)]
        heads = np.array([h for h, _ in draws], dtype=bool)
        served = np.zeros((rows, n), dtype=bool)
        payments = np.zeros((rows, n))
        if heads.any():
            o = self.wfca.run_batch(V[heads])
            served[heads], payments[heads] = o.served, o.payments
        if (~heads).any():
            masks = np.stack([m for h, m in draws if not h])
            o = self.sampling.run_batch(V[~heads], masks=masks)
            served[~heads], payments[~heads] = o.served, o.payments
        return BatchOutcome(served, payments, {"coin": np.where(heads, "wfca", "sampling")})


def run_hedging(instance: Instance, valuation, rng=0, config: MechanismConfig | None = None, record: bool = True) -> Transcript:
    config = (config or MechanismConfig()).resolved(instance)
    return Hedging(instance, config).run(valuation, record=record, rng=_rng(rng))


# -- factory ----------------------------------------------------------------------


def make_mechanism(name: str, instance: Instance, config: MechanismConfig | None = None):
    """Prepare a mechanism (including any prior-based precomputation) for repeated runs."""
    config = (config or MechanismConfig()).resolved(instance)
    t, seed = config.estimator_trials, config.seed
    if name == "theorem1":
        return run_theorem1_auction(instance, None, t, seed, config)
    if name == "theorem1_r":
        return run_theorem1_variant_r(instance, None, None, t, seed, config)
    if name == "mechanism2":
        opt = B.estimate_opt(instance, t, seed)
        return Mechanism2(instance, B.mechanism2_params(instance, opt, alpha_override=config.alpha), config)
    if name == "wfca":
        return WFCA(instance, config)
    if name == "sampling":
        return Sampling(instance, config)
    if name == "hedging":
        return Hedging(instance, config)
    if name == "bounded_support":
        return run_bounded_support(instance, t, seed, config)
    if name == "binary_optimal":
        return BinaryOptimal(instance, config)
    raise InputError(f"unknown mechanism {name!r}; choose from {', '.join(MECHANISMS)}")

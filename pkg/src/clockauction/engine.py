"""Clock-auction state machine and transcripts.

Bidders respond truthfully: a bidder accepts a price ``p`` iff ``p <= v_i``. A
bidder who rejects leaves for good. Served bidders pay the last price they
accepted. Bidders who were never offered anything pay 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractViolation
from .feasibility import FeasibilitySystem


@dataclass(frozen=True)
class Round:
    """One batch of offers, processed in the listed order."""

    bidders: tuple[int, ...]
    prices: tuple[float, ...]
    accepted: tuple[bool, ...]
    active: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "bidders": list(self.bidders),
            "prices": list(self.prices),
            "accepted": list(self.accepted),
            "active": list(self.active),
        }


@dataclass(frozen=True)
class Transcript:
    n: int
    mechanism: str
    rounds: tuple[Round, ...]
    served: tuple[int, ...]
    payments: tuple[float, ...]
    final_active: tuple[int, ...]
    revealed_values: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    recorded: bool = True

    def welfare(self, valuation: Sequence[float]) -> float:
        return math.fsum(float(valuation[i]) for i in self.served)

    def revenue(self) -> float:
        return math.fsum(self.payments)

    def to_dict(self) -> dict:
        return {
            "mechanism": self.mechanism,
            "n": self.n,
            "rounds": [r.to_dict() for r in self.rounds],
            "served": list(self.served),
            "payments": list(self.payments),
            "final_active": list(self.final_active),
            "revealed_values": {str(k): v for k, v in sorted(self.revealed_values.items())},
            "meta": self.meta,
            "recorded": self.recorded,
        }


def welfare(transcript: Transcript, valuation: Sequence[float]) -> float:
    return transcript.welfare(valuation)


def revenue(transcript: Transcript) -> float:
    return transcript.revenue()


class ClockAuction:
    """Mutable state of one run: active set, clocks and the transcript so far.

    With ``record=False`` rounds are not stored. Outcomes are identical, and runs
    are cheaper inside Monte-Carlo loops.
    """

    def __init__(self, valuation: Sequence[float], system: FeasibilitySystem, mechanism: str = "", record: bool = True):
        self._values = np.asarray(valuation, dtype=np.float64)
        if self._values.shape != (system.n,):
            raise ContractViolation(f"valuation has shape {self._values.shape}, expected ({system.n},)")
        self.system = system
        self.n = system.n
        self.mechanism = mechanism
        self.record = record
        self.active = np.ones(self.n, dtype=bool)
        self.clock = np.zeros(self.n)
        self.accepted_price = np.zeros(self.n)
        self.rounds: list[Round] = []
        self.revealed: dict[int, float] = {}

    def active_indices(self) -> np.ndarray:
        return np.flatnonzero(self.active)

    def offer_round(self, bidders: Iterable[int], prices) -> np.ndarray:
        """Offer ``prices`` to ``bidders`` one after another in the given order.

        Returns the accept flags aligned with ``bidders``. Offers to inactive bidders,
        repeated bidders and price decreases are auction bugs and raise.
        """
        bidders = np.asarray(list(bidders) if not isinstance(bidders, np.ndarray) else bidders, dtype=np.intp)
        prices = np.asarray(prices, dtype=np.float64)
        prices = np.full(bidders.shape, prices) if prices.ndim == 0 else np.broadcast_to(prices, bidders.shape).copy()
        if bidders.size == 0:
            return np.zeros(0, dtype=bool)
        if bidders.size > 1 and (np.bincount(bidders, minlength=self.n) > 1).any():
            raise ContractViolation("a bidder was offered twice in one round")
        if not self.active[bidders].all():
            raise ContractViolation(f"offer to inactive bidders {bidders[~self.active[bidders]].tolist()}")
        if not (prices >= 0).all():
            # also rejects NaN
            raise ContractViolation("clock prices must be nonnegative")
        lowered = prices < self.clock[bidders]
        if lowered.any():
            i = int(bidders[lowered][0])
            raise ContractViolation(f"clock of bidder {i} decreased from {self.clock[i]} to {prices[lowered][0]}")
        accepted = prices <= self._values[bidders]
        self.clock[bidders] = prices
        self.accepted_price[bidders[accepted]] = prices[accepted]
        self.active[bidders[~accepted]] = False
        if self.record:
            self.rounds.append(
                Round(
                    bidders=tuple(bidders.tolist()),
                    prices=tuple(prices.tolist()),
                    accepted=tuple(accepted.tolist()),
                    active=tuple(self.active_indices().tolist()),
                )
            )
        return accepted

    def reveal(self, bidder: int, value: float) -> None:
        self.revealed[int(bidder)] = float(value)

    def finalize(self, served: Iterable[int], meta: dict | None = None) -> Transcript:
        served = tuple(sorted(int(i) for i in served))
        mask = np.zeros(self.n, dtype=bool)
        mask[list(served)] = True
        if (mask & ~self.active).any():
            raise ContractViolation(f"served bidders {np.flatnonzero(mask & ~self.active).tolist()} are not active")
        if not self.system.is_feasible_mask(mask):
            raise ContractViolation(f"served set {list(served)} is infeasible")
        payments = np.where(mask, self.accepted_price, 0.0)
        return Transcript(
            n=self.n,
            mechanism=self.mechanism,
            rounds=tuple(self.rounds),
            served=served,
            payments=tuple(payments.tolist()),
            final_active=tuple(self.active_indices().tolist()),
            revealed_values=dict(self.revealed),
            meta=dict(meta or {}),
            recorded=self.record,
        )


def offer_round(state: ClockAuction, prices, order: Iterable[int]) -> np.ndarray:
    """Function form: offer ``prices[i]`` to each bidder ``i`` in ``order``."""
    order = np.asarray(list(order), dtype=np.intp)
    prices = np.asarray(prices, dtype=np.float64)
    return state.offer_round(order, prices[order] if prices.ndim else prices)


def finalize(state: ClockAuction, served: Iterable[int], meta: dict | None = None) -> Transcript:
    return state.finalize(served, meta)


def check_transcript(transcript: Transcript, valuation: Sequence[float], system: FeasibilitySystem) -> list[str]:
    """Replay a transcript and list every violated clock-auction invariant.

    The checks are weakly increasing clocks, truthful responses (reject iff price > value),
    no offers after a drop, a feasible served set inside the final active set,
    payment equal to the last accepted price, and individual rationality. An
    empty list means the transcript is clean. Unrecorded transcripts get only
    the outcome-level checks.
    """
    v = np.asarray(valuation, dtype=np.float64)
    problems: list[str] = []
    n = transcript.n
    clock = np.zeros(n)
    last_accepted = np.zeros(n)
    active = np.ones(n, dtype=bool)
    for t, rnd in enumerate(transcript.rounds):
        for i, p, ok in zip(rnd.bidders, rnd.prices, rnd.accepted):
            if not active[i]:
                problems.append(f"round {t}: offer to dropped bidder {i}")
            if p < clock[i]:
                problems.append(f"round {t}: clock of bidder {i} decreased {clock[i]} -> {p}")
            if ok != (p <= v[i]):
                problems.append(f"round {t}: bidder {i} response {ok} inconsistent with price {p} and value {v[i]}")
            clock[i] = p
            if ok:
                last_accepted[i] = p
            else:
                active[i] = False
        if tuple(np.flatnonzero(active).tolist()) != rnd.active:
            problems.append(f"round {t}: recorded active set disagrees with replay")
    served = np.zeros(n, dtype=bool)
    served[list(transcript.served)] = True
    final_active = np.zeros(n, dtype=bool)
    final_active[list(transcript.final_active)] = True
    if transcript.recorded and not np.array_equal(active, final_active):
        problems.append("final active set disagrees with replay")
    if (served & ~final_active).any():
        problems.append(f"served bidders {np.flatnonzero(served & ~final_active).tolist()} not active at the end")
    if not system.is_feasible_mask(served):
        problems.append(f"served set {list(transcript.served)} infeasible")
    pay = np.asarray(transcript.payments)
    if (pay[~served] != 0).any():
        problems.append("unserved bidder charged")
    if transcript.recorded and (pay[served] != last_accepted[served]).any():
        problems.append("payment differs from last accepted price")
    if (pay[served] > v[served]).any():
        problems.append("individual rationality violated")
    return problems

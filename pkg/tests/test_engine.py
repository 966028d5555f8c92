import numpy as np
import pytest

from clockauction.engine import ClockAuction, check_transcript
from clockauction.errors import ContractViolation
from clockauction.feasibility import FeasibilitySystem

SINGLETONS = FeasibilitySystem.from_sets([[0], [1]])
PAIR = FeasibilitySystem.from_sets([[0, 1]])


def test_serve_nobody():
    st = ClockAuction([5.0, 1.0], SINGLETONS)
    tr = st.finalize([])
    assert tr.payments == (0.0, 0.0)
    assert tr.welfare([5.0, 1.0]) == 0 and tr.revenue() == 0


def test_single_round_payment():
    st = ClockAuction([5.0, 1.0], SINGLETONS)
    acc = st.offer_round([0, 1], 2.0)
    assert acc.tolist() == [True, False]
    tr = st.finalize([0])
    assert tr.payments == (2.0, 0.0)
    assert check_transcript(tr, [5.0, 1.0], SINGLETONS) == []


def test_welfare_and_revenue():
    st = ClockAuction([1.0, 2.0], PAIR)
    st.offer_round([0, 1], 1.0)
    tr = st.finalize([0, 1])
    assert tr.welfare([1.0, 2.0]) == 3.0
    assert tr.revenue() == 2.0


def test_price_decrease_rejected():
    st = ClockAuction([5.0, 5.0], PAIR)
    st.offer_round([0], 2.0)
    with pytest.raises(ContractViolation, match="decreased"):
        st.offer_round([0], 1.0)


def test_offer_to_dropped_rejected():
    st = ClockAuction([1.0, 5.0], PAIR)
    st.offer_round([0], 2.0)
    with pytest.raises(ContractViolation, match="inactive"):
        st.offer_round([0], 3.0)


def test_infeasible_or_inactive_serve_rejected():
    st = ClockAuction([5.0, 5.0], SINGLETONS)
    with pytest.raises(ContractViolation, match="infeasible"):
        st.finalize([0, 1])
    st.offer_round([1], 6.0)
    with pytest.raises(ContractViolation, match="not active"):
        st.finalize([1])


def test_accept_at_equal_price():
    st = ClockAuction([2.0], FeasibilitySystem.from_sets([[0]]))
    assert st.offer_round([0], 2.0).tolist() == [True]
    assert st.offer_round([0], np.nextafter(2.0, 3.0)).tolist() == [False]


def test_unrecorded_run_same_outcome():
    outs = []
    for record in (True, False):
        st = ClockAuction([3.0, 1.0], SINGLETONS, record=record)
        st.offer_round([0, 1], 2.0)
        outs.append(st.finalize([0]))
    assert outs[0].served == outs[1].served and outs[0].payments == outs[1].payments
    assert outs[0].rounds and not outs[1].rounds


def test_checker_flags_tampering():
    st = ClockAuction([3.0, 1.0], SINGLETONS)
    st.offer_round([0, 1], 2.0)
    tr = st.finalize([0])
    from dataclasses import replace

    assert check_transcript(replace(tr, payments=(4.0, 0.0)), [3.0, 1.0], SINGLETONS)
    assert check_transcript(replace(tr, payments=(2.0, 1.0)), [3.0, 1.0], SINGLETONS)
    # a response that disagrees with the value
    assert check_transcript(tr, [1.5, 1.0], SINGLETONS)

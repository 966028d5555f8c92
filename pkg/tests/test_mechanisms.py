import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clockauction import bayes as B
from clockauction.engine import check_transcript
from clockauction.errors import InputError, NonTerminationError
from clockauction.evaluation import brute_force_opt, compute_rstar, lower_bound_instance
from clockauction.feasibility import FeasibilitySystem
from clockauction.generators import random_binary_instance, random_discrete_instance, random_mixed_instance
from clockauction.mechanisms import (
    WFCA,
    FixedPreferredSet,
    Hedging,
    Mechanism2,
    MechanismConfig,
    Sampling,
    grid_index,
    ladder_candidates,
    loglog_guard,
    make_mechanism,
    run_binary_optimal,
    run_bounded_support,
    run_hedging,
    run_mechanism2,
    run_sampling,
    run_single_price,
    run_theorem1_auction,
    run_theorem1_variant_r,
    run_wfca,
    support_table,
)
from clockauction.stats import Estimate, stream
from clockauction.valuation import DiscreteFinite, Exponential, Instance, PointMass, Uniform

from conftest import exact_expected_welfare, exact_opt

SINGLETONS = FeasibilitySystem.from_sets([[0], [1]])
U10 = Instance((Uniform(0.0, 10.0), Uniform(0.0, 10.0)), SINGLETONS)
BINARY4 = Instance(
    tuple(DiscreteFinite((0.0, 1.0), (0.5, 0.5)) for _ in range(4)), FeasibilitySystem.from_sets([[0, 1], [2, 3]])
)


def m2(instance, goal, opt=1e9, delta=1.0, order=None):
    params = B.BayesParams((), None, Estimate(opt, 0.0, 0, True), 1, 1.0, goal)
    cfg = MechanismConfig(delta_step=delta, price_cap=10.0, order=order).resolved(instance)
    return Mechanism2(instance, params, cfg)


# -- single price ------------------------------------------------------------------


def test_single_price_binary_example():
    tr = run_single_price(BINARY4, [1, 0, 1, 1], [0.5] * 4)
    assert tr.served == (2, 3) and tr.welfare([1, 0, 1, 1]) == 2


def test_single_price_zero_fixed_set():
    inst = lower_bound_instance()
    tr = run_single_price(inst, [0.4, 1.0, 1.0], [0, 0, 0], FixedPreferredSet((1, 2)))
    assert tr.served == (1, 2) and tr.revenue() == 0


def test_single_price_above_all_values():
    tr = run_single_price(BINARY4, [1, 0, 1, 1], [2.0] * 4)
    assert tr.served == ()


def test_fixed_set_must_be_feasible():
    with pytest.raises(InputError):
        run_single_price(BINARY4, [1, 1, 1, 1], [0] * 4, FixedPreferredSet((0, 2)))


# -- ladder auctions ---------------------------------------------------------------


def test_theorem1_point_masses_reach_opt():
    inst = Instance(tuple(PointMass(x) for x in (1.0, 2.0, 2.5)), FeasibilitySystem.from_sets([[0, 1], [2]]))
    auc = run_theorem1_auction(inst, trials=100)
    tr = auc.run([1.0, 2.0, 2.5])
    assert tr.welfare([1.0, 2.0, 2.5]) == 3.0


def test_theorem1_zero_delta_only_zero_price():
    inst = Instance((PointMass(0.0), PointMass(0.0)), SINGLETONS)
    assert [c.name for c in ladder_candidates(inst, 0.0, 5)] == ["zero_price"]
    auc = run_theorem1_auction(inst, trials=10)
    assert auc.chosen.name == "zero_price"


def test_ladder_prices():
    cands = ladder_candidates(lower_bound_instance(), 4.0, 5)
    assert [float(c.prices[0]) for c in cands[1:]] == [8.0, 4.0, 2.0, 1.0]


def test_variant_r_one():
    inst = Instance((PointMass(1.0), PointMass(2.0)), SINGLETONS)
    auc = run_theorem1_variant_r(inst, opt_estimate=2.0, r=1, trials=10)
    assert [c.name for c in auc.candidates] == ["zero_price", "uniform_j0"]
    assert float(auc.candidates[1].prices[0]) == 4.0


def test_bounded_support_point_masses():
    inst = Instance(tuple(PointMass(x) for x in (1.0, 2.0, 2.5)), FeasibilitySystem.from_sets([[0, 1], [2]]))
    auc = run_bounded_support(inst)
    assert len(auc.candidates) == 1
    assert auc.run([1.0, 2.0, 2.5]).served == (0, 1)


def test_bounded_support_binary_top_level():
    auc = run_bounded_support(BINARY4)
    top = auc.candidates[1]
    assert top.prices.tolist() == [1.0] * 4
    tr = run_single_price(BINARY4, [1, 0, 1, 1], top.prices, top.selection)
    assert tr.welfare([1, 0, 1, 1]) == 2


def test_bounded_support_rejects_continuous():
    with pytest.raises(InputError):
        support_table(U10)


def test_support_table_padding():
    inst = Instance((PointMass(2.0), DiscreteFinite((1.0, 3.0), (0.5, 0.5))), SINGLETONS)
    assert support_table(inst).tolist() == [[2.0, 2.0], [1.0, 3.0]]


# -- binary ------------------------------------------------------------------------


def test_binary_examples():
    inst = Instance(tuple(DiscreteFinite((0.0, 1.0), (0.5, 0.5)) for _ in range(3)), FeasibilitySystem.from_sets([[0, 1], [2]]))
    tr = run_binary_optimal(inst, [1, 1, 0])
    assert tr.served == (0, 1) and tr.welfare([1, 1, 0]) == 2
    assert run_binary_optimal(inst, [0, 0, 0]).served == ()
    with pytest.raises(InputError):
        run_binary_optimal(inst, [0.5, 1, 0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_binary_reaches_opt(seed):
    inst, v = random_binary_instance(np.random.default_rng(seed))
    tr = run_binary_optimal(inst, v)
    assert tr.welfare(v) == brute_force_opt(inst.feasibility, v)[1]
    assert check_transcript(tr, v, inst.feasibility) == []


# -- mechanism 2 -------------------------------------------------------------------


def test_loglog_guard():
    assert loglog_guard(1) == loglog_guard(2) == 1.0
    assert loglog_guard(16) == 2.0
    assert loglog_guard(3) == 1.0


def test_mechanism2_feasible_exit_example():
    tr = m2(U10, math.inf).run([5.0, 3.0])
    assert tr.served == (0,) and tr.payments == (4.0, 0.0)
    assert tr.meta["exit_reason"] == "feasible"
    assert check_transcript(tr, [5.0, 3.0], SINGLETONS) == []


def test_mechanism2_goal_exit_example():
    tr = m2(U10, 2.0).run([5.0, 5.0])
    assert tr.meta["exit_reason"] == "goal" and tr.meta["price"] == 2.0
    assert len(tr.served) == 1 and tr.revenue() == 2.0


def test_mechanism2_zero_price_branch():
    inst = Instance(tuple(PointMass(x) for x in (1.0, 2.0, 2.5)), FeasibilitySystem.from_sets([[0, 1], [2]]))
    tr = run_mechanism2(inst, None, [1.0, 2.0, 2.5])
    assert tr.meta["exit_reason"] == "zero_price"
    assert tr.served == (0, 1) and tr.revenue() == 0


def test_mechanism2_mid_round_exit_keeps_prior_price():
    # bidder 0 rejects first in round 4; bidder 1 was never offered 4
    tr = m2(U10, math.inf, order=(0, 1)).run([3.0, 5.0])
    assert tr.served == (1,) and tr.payments == (0.0, 3.0)


def test_mechanism2_nontermination():
    inst = Instance((Exponential(1.0), Exponential(1.0)), FeasibilitySystem.from_sets([[0], [1]]))
    params = B.BayesParams((), None, Estimate(1e9, 0.0, 0, True), 1, 1.0, math.inf)
    mech = Mechanism2(inst, params, MechanismConfig(delta_step=1.0, price_cap=3.0).resolved(inst))
    with pytest.raises(NonTerminationError) as e:
        mech.run([50.0, 50.0])
    assert e.value.transcript is not None


def _compare_batch(mech, V):
    out = mech.run_batch(V, 0)
    for r, v in enumerate(V):
        tr = mech.run(v, r)
        assert check_transcript(tr, v, mech.instance.feasibility) == []
        assert tuple(np.flatnonzero(out.served[r])) == tr.served
        assert np.allclose(out.payments[r], tr.payments, rtol=0, atol=1e-12)
    return out


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.0, 3.0), st.sampled_from([0.25, 0.5, 1.0]))
def test_mechanism2_batch_equals_transcript(seed, goal, delta):
    rng = np.random.default_rng(seed)
    inst = random_discrete_instance(rng, n_max=7, ell=3)
    order = tuple(rng.permutation(inst.n).tolist())
    params = B.BayesParams((), None, Estimate(1e9, 0.0, 0, True), 1, 1.0, goal if goal > 0.1 else math.inf)
    cfg = MechanismConfig(delta_step=delta, order=order).resolved(inst)
    mech = Mechanism2(inst, params, cfg)
    V = inst.sample_matrix(rng, 12)
    out = _compare_batch(mech, V)
    assert set(out.info["exit_reason"].tolist()) <= {"feasible", "goal"}


# -- WFCA --------------------------------------------------------------------------


def test_wfca_examples():
    tr = run_wfca(U10, [5.0, 3.0], MechanismConfig(epsilon=1.0))
    assert tr.served == (0,) and tr.welfare([5.0, 3.0]) == 5.0
    one = Instance((Uniform(0.0, 1.0),) * 3, FeasibilitySystem.from_sets([[0, 1, 2]]))
    tr = run_wfca(one, [0.2, 0.5, 0.1])
    assert tr.rounds == () and tr.served == (0, 1, 2) and tr.revenue() == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([0.1, 0.25, 0.5]))
def test_wfca_batch_equals_transcript_and_half_rstar(seed, eps):
    rng = np.random.default_rng(seed)
    inst = random_mixed_instance(rng, n_max=8)
    cfg = MechanismConfig(epsilon=eps).resolved(inst)
    mech = WFCA(inst, cfg)
    V = inst.sample_matrix(rng, 10)
    out = _compare_batch(mech, V)
    for r, v in enumerate(V):
        assert out.welfare(V)[r] >= compute_rstar(inst.feasibility, v, eps) / 2


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([0.1, 0.25]))
def test_wfca_run_many_equals_run(seed, eps):
    rng = np.random.default_rng(seed)
    inst = random_mixed_instance(rng, n_max=8)
    mech = WFCA(inst, MechanismConfig(epsilon=eps).resolved(inst))
    V = inst.sample_matrix(rng, 6)
    assert mech.run_many(V) == [mech.run(v, r) for r, v in enumerate(V)]


def test_grid_index_exact():
    # 3 * 0.1 > 0.3 in binary, so the offer 3 * eps is already rejected at v = 0.3
    assert grid_index(0.3, 0.1) == 2
    assert grid_index(0.75, 0.25) == 3
    assert grid_index(0.29999, 0.1) == 2
    assert grid_index(5.0, 1.0) == 5


# -- sampling and hedging ----------------------------------------------------------

SAMP = Instance((Uniform(0.0, 10.0),) * 4, FeasibilitySystem.from_sets([[0, 1], [2, 3]]))


def test_sampling_examples():
    v = [10.0, 1.0, 2.0, 2.0]
    tr, state = run_sampling(SAMP, v, mask=[True, False, False, False])
    assert tr.served == (1,) and tr.welfare(v) == 1.0
    assert state.chosen == (0, 1) and state.sampled == (0,)
    assert tr.revealed_values == {0: 10.0}
    tr, _ = run_sampling(SAMP, v, mask=[False] * 4)
    assert tr.served == (0, 1) and tr.revenue() == 0
    tr, _ = run_sampling(SAMP, v, mask=[True] * 4)
    assert tr.served == ()


def test_sampling_grid_mode():
    cfg = MechanismConfig(epsilon=0.5, sampling_grid=True)
    tr, _ = run_sampling(SAMP, [10.0, 1.0, 2.0, 2.2], mask=[False, False, True, True], config=cfg)
    assert tr.revealed_values == {2: 2.0, 3: 2.0}
    assert check_transcript(tr, [10.0, 1.0, 2.0, 2.2], SAMP.feasibility) == []


def test_sampling_batch_equals_transcript(rng):
    mech = Sampling(SAMP, MechanismConfig(seed=4).resolved(SAMP))
    _compare_batch(mech, SAMP.sample_matrix(rng, 40))


def test_hedging_delegates():
    cfg = MechanismConfig(seed=0).resolved(SAMP)
    mech = Hedging(SAMP, cfg)
    v = np.array([3.0, 1.0, 2.0, 2.5])
    seen = set()
    for t in range(20):
        tr = mech.run(v, t)
        coin = tr.meta["coin"]
        seen.add(coin)
        if coin == "wfca":
            ref = WFCA(SAMP, cfg).run(v, t)
            assert (tr.served, tr.payments, tr.rounds) == (ref.served, ref.payments, ref.rounds)
        else:
            assert "sampling" in tr.meta
    assert seen == {"wfca", "sampling"}
    _compare_batch(mech, SAMP.sample_matrix(stream(1, 1), 30))


def test_hedging_coin_frequency():
    mech = Hedging(SAMP, MechanismConfig().resolved(SAMP))
    heads = sum(mech.draw(stream(s, 7, 0))[0] for s in range(4000))
    assert abs(heads / 4000 - 0.5) <= 3 * math.sqrt(0.25 / 4000)
    # the convenience runner uses the same coin
    tr = run_hedging(SAMP, [0.0, 0.0, 0.0, 0.0], rng=1)
    assert tr.meta["coin"] == ("wfca" if mech.draw(stream(1))[0] else "sampling")


# -- factory and exact guarantees --------------------------------------------------


def test_make_mechanism_unknown():
    with pytest.raises(InputError):
        make_mechanism("nope", SAMP)


def test_bounded_support_exact_on_small_instance():
    inst = random_discrete_instance(np.random.default_rng(3), n_max=5, ell=2, n_min=3)
    auc = run_bounded_support(inst)
    w = exact_expected_welfare(inst, lambda v: auc.run(v))
    assert w * 2 >= exact_opt(inst)

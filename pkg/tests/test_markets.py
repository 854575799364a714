"""Market attachments: acceptance rule, bidding objectives, reserve
headroom, and the post-hoc activation simulator."""
from __future__ import annotations

import numpy as np
import pytest

from support import START, market_config, random_portfolio, small_network
from ucbid.markets import (DAM_FLOOR, AfrrMarket, AfrrParticipant, BidLadder,
                           DamMarket, ModelError, add_afrr_bess_reserve,
                           add_afrr_bidding, add_afrr_generator_reserve,
                           add_dam_bidding, compute_acceptance,
                           simulate_activation)
from ucbid.milp import HighsSolver, LinearExpression, Status
from ucbid.portfolio import (Bus, CommittableGenerator, FixedLoad,
                             GridConnection, PortfolioNetwork, StorageUnit,
                             TimeIndex, build_base_model)
from ucbid.stochastic import TRAJ_DAM, Scenario, build_scenario_replica

solve = HighsSolver().solve_milp


def test_acceptance_rule_with_ties():
    ladder = BidLadder((40.0, 60.0, 70.0))
    acc = compute_acceptance(ladder, np.array([60.0]))
    assert acc.shape == (1, 3)
    assert list(acc[0]) == [1.0, 1.0, 0.0]


def test_acceptance_rows_are_monotone():
    rng = np.random.default_rng(10)
    for _ in range(20):
        levels = tuple(np.sort(np.round(rng.uniform(-50, 90, 4), 2)))
        if len(set(levels)) < 4:
            continue
        acc = compute_acceptance(BidLadder(levels),
                                 np.round(rng.uniform(-60, 100, 6), 2))
        diffs = np.diff(acc, axis=1)
        assert (diffs <= 0).all()   # cheaper level accepted when dearer is


def test_bid_ladder_validation():
    with pytest.raises(ModelError):
        BidLadder(())
    with pytest.raises(ModelError):
        BidLadder((5.0, 5.0))
    with pytest.raises(ModelError):
        BidLadder((5.0, 4.0))
    with pytest.raises(ModelError):
        DamMarket(BidLadder((-400.0, 10.0)), np.zeros(2))  # floor mismatch


def _sell_portfolio(T, mc=10.0, p_max=10.0):
    return PortfolioNetwork(
        "seller", TimeIndex(START, T),
        buses=[Bus("el", "electricity")],
        generators=[CommittableGenerator("g", "el", p_max=p_max,
                                         marginal_cost=mc)],
        loads=[FixedLoad("l", "el", np.zeros(T))],
        grid=GridConnection("el", 25.0))


def test_always_accepted_level_collapses_to_exchange():
    T = 3
    prices = np.array([50.0, 60.0, 55.0])
    build = build_base_model(_sell_portfolio(T))
    add_dam_bidding(build, DamMarket(BidLadder((DAM_FLOOR,)), prices),
                    side="sell")
    sol = solve(build.model)
    assert sol.status is Status.OPTIMAL
    for t in range(T):
        assert sol.value(build.vmap.get("dam", "net", t)) \
            == pytest.approx(10.0, abs=1e-7)
    expected = 10.0 * 10.0 * T - float(prices @ np.full(T, 10.0))
    assert sol.objective_value == pytest.approx(expected, abs=1e-6)


def test_all_levels_rejected_islands_the_portfolio():
    T = 2
    prices = np.full(T, -600.0)      # below even the exchange floor
    build = build_base_model(_sell_portfolio(T))
    add_dam_bidding(build, DamMarket(BidLadder((DAM_FLOOR, 0.0)), prices),
                    side="sell")
    sol = solve(build.model)
    assert sol.status is Status.OPTIMAL
    for t in range(T):
        assert sol.value(build.vmap.get("dam", "net", t)) == 0.0
    # and a load with no local cover cannot be imported either
    net = PortfolioNetwork(
        "island", TimeIndex(START, T),
        buses=[Bus("el", "electricity")],
        loads=[FixedLoad("l", "el", np.full(T, 3.0))],
        grid=GridConnection("el", 25.0))
    build = build_base_model(net)
    add_dam_bidding(build, DamMarket(BidLadder((DAM_FLOOR, 0.0)), prices))
    assert solve(build.model).status is Status.INFEASIBLE


def test_volume_lands_on_accepted_level():
    # levels 30/50 at clearing 40: the 50 bid is rejected, volume moves to
    # 30, and settlement is at the clearing price: credit 40 * 10
    build = build_base_model(_sell_portfolio(1, mc=20.0))
    add_dam_bidding(build,
                    DamMarket(BidLadder((30.0, 50.0)), np.array([40.0]),
                              floor=30.0),
                    side="sell")
    sol = solve(build.model)
    assert sol.status is Status.OPTIMAL
    assert sol.value(build.vmap.get("dam", "bid0", 0)) \
        == pytest.approx(10.0, abs=1e-7)
    assert sol.value(build.vmap.get("dam", "bid1", 0)) == 0.0
    assert sol.objective_value == pytest.approx(20.0 * 10 - 40.0 * 10,
                                                abs=1e-6)


def test_pay_as_clear_neutral_to_level_split():
    T = 2
    prices = np.array([45.0, 70.0])
    objs = []
    for pin in (None, 0, 1):
        build = build_base_model(_sell_portfolio(T))
        add_dam_bidding(build,
                        DamMarket(BidLadder((DAM_FLOOR, -20.0)), prices),
                        side="sell")
        if pin is not None:
            for t in range(T):
                build.model.fix(build.vmap.get("dam", f"bid{pin}", t), 0.0)
        sol = solve(build.model)
        assert sol.status is Status.OPTIMAL
        objs.append(sol.objective_value)
    assert objs[0] == pytest.approx(objs[1], abs=1e-9)
    assert objs[0] == pytest.approx(objs[2], abs=1e-9)


def test_same_sign_bids_and_direction_economics():
    T = 4
    prices = np.array([5.0, 80.0, 5.0, 80.0])
    net = PortfolioNetwork(
        "trader", TimeIndex(START, T),
        buses=[Bus("el", "electricity")],
        generators=[CommittableGenerator("g", "el", p_max=15.0,
                                         marginal_cost=10.0)],
        loads=[FixedLoad("l", "el", np.full(T, 5.0))],
        grid=GridConnection("el", 25.0))
    build = build_base_model(net)
    add_dam_bidding(build,
                    DamMarket(BidLadder((DAM_FLOOR, 0.0, 30.0)), prices))
    sol = solve(build.model)
    assert sol.status is Status.OPTIMAL
    for t in range(T):
        bids = [sol.value(build.vmap.get("dam", f"bid{j}", t))
                for j in range(3)]
        assert not (max(bids) > 1e-6 and min(bids) < -1e-6)
    assert sol.value(build.vmap.get("dam", "net", 0)) < -1e-6   # buys cheap
    assert sol.value(build.vmap.get("dam", "net", 1)) > 1e-6    # sells dear


def _maximize(build, ref):
    push = LinearExpression()
    push.add_term(ref, -1.0)
    build.model.add_objective(push)
    sol = solve(build.model)
    assert sol.status is Status.OPTIMAL
    return sol.value(ref)


def _reserve_gen_network(load):
    return PortfolioNetwork(
        "res", TimeIndex(START, 1),
        buses=[Bus("el", "electricity")],
        generators=[CommittableGenerator("g", "el", p_max=15.0, p_min=5.0,
                                         marginal_cost=3.0)],
        loads=[FixedLoad("l", "el", np.array([float(load)]))],
        grid=GridConnection("el", 30.0))


def test_generator_reserve_headroom_committed():
    for role, expect in (("afrr_pos", 5.0), ("afrr_neg", 5.0)):
        build = build_base_model(_reserve_gen_network(10.0))
        add_afrr_generator_reserve(build, "g")
        assert _maximize(build, build.vmap.get("g", role, 0)) \
            == pytest.approx(expect, abs=1e-7)


def test_generator_reserve_zero_when_off():
    for role in ("afrr_pos", "afrr_neg"):
        build = build_base_model(_reserve_gen_network(0.0))
        add_afrr_generator_reserve(build, "g")
        build.model.fix(build.vmap.get("g", "commit", 0), 0.0)
        assert _maximize(build, build.vmap.get("g", role, 0)) \
            == pytest.approx(0.0, abs=1e-9)


def test_generator_downward_reserve_zero_at_minimum_load():
    build = build_base_model(_reserve_gen_network(5.0))
    add_afrr_generator_reserve(build, "g")
    assert _maximize(build, build.vmap.get("g", "afrr_neg", 0)) \
        == pytest.approx(0.0, abs=1e-9)


def _reserve_bess_network(e_max, e_initial):
    return PortfolioNetwork(
        "res", TimeIndex(START, 1),
        buses=[Bus("el", "electricity")],
        generators=[CommittableGenerator("feed", "el", p_max=10.0)],
        storage_units=[StorageUnit("bess", "el", p_max=6.0, e_max=e_max,
                                   eff_in=0.95, eff_out=0.95,
                                   e_initial=e_initial)],
        loads=[FixedLoad("l", "el", np.zeros(1))],
        grid=GridConnection("el", 30.0))


def _fix_flows(build, p_in, p_out):
    build.model.fix(build.vmap.get("bess", "p_in", 0), p_in)
    build.model.fix(build.vmap.get("bess", "p_out", 0), p_out)


def test_bess_reserve_idle_symmetric():
    for role in ("afrr_pos", "afrr_neg"):
        build = build_base_model(_reserve_bess_network(12.0, 6.0))
        add_afrr_bess_reserve(build, "bess")
        _fix_flows(build, 0.0, 0.0)
        assert _maximize(build, build.vmap.get("bess", role, 0)) \
            == pytest.approx(6.0, abs=1e-7)


def test_bess_full_cannot_absorb():
    build = build_base_model(_reserve_bess_network(6.0, 6.0))
    add_afrr_bess_reserve(build, "bess")
    _fix_flows(build, 0.0, 0.0)
    assert _maximize(build, build.vmap.get("bess", "afrr_neg", 0)) \
        == pytest.approx(0.0, abs=1e-9)


def test_bess_energy_window_while_charging():
    # one stored hour: level 2 plus current 1 MW charge caps upward call at 3
    build = build_base_model(_reserve_bess_network(6.0, 2.0))
    add_afrr_bess_reserve(build, "bess")
    _fix_flows(build, 1.0, 0.0)
    assert _maximize(build, build.vmap.get("bess", "afrr_pos", 0)) \
        == pytest.approx(3.0, abs=1e-7)


def _afrr_instance(T, pos_levels, neg_levels, pos_clear, neg_clear,
                   block_hours=1):
    net = _reserve_gen_network(10.0)
    net = PortfolioNetwork(
        net.name, TimeIndex(START, T), buses=net.buses,
        generators=net.generators,
        loads=[FixedLoad("l", "el", np.full(T, 10.0))], grid=net.grid)
    build = build_base_model(net)
    add_afrr_generator_reserve(build, "g")
    afrr = AfrrMarket(BidLadder(pos_levels), BidLadder(neg_levels),
                      np.asarray(pos_clear, dtype=float),
                      np.asarray(neg_clear, dtype=float), block_hours)
    add_afrr_bidding(build, afrr, [AfrrParticipant("g", "generator")])
    return build


def test_pay_as_bid_settles_at_bid_level():
    T = 2
    build = _afrr_instance(T, (10.0,), (10.0,), [12.0, 12.0], [1.0, 1.0])
    sol = solve(build.model)
    assert sol.status is Status.OPTIMAL
    for t in range(T):
        assert sol.value(build.vmap.get("afrr_pos", "bid0", t)) \
            == pytest.approx(5.0, abs=1e-7)
    # settled at the 10 EUR level, not the 12 EUR clearing
    assert build.market_terms.evaluate(sol.values) \
        == pytest.approx(-10.0 * 5.0 * T, abs=1e-6)


def test_pay_as_bid_prefers_accepted_level():
    build = _afrr_instance(1, (8.0, 11.0), (8.0, 11.0), [10.0], [1.0])
    sol = solve(build.model)
    assert sol.status is Status.OPTIMAL
    assert sol.value(build.vmap.get("afrr_pos", "bid0", 0)) \
        == pytest.approx(5.0, abs=1e-7)
    assert sol.value(build.vmap.get("afrr_pos", "bid1", 0)) == 0.0
    assert build.market_terms.evaluate(sol.values) \
        == pytest.approx(-40.0, abs=1e-6)


def test_afrr_volume_on_highest_accepted_level():
    T = 3
    build = _afrr_instance(T, (4.0, 9.0, 16.0), (3.0, 8.0),
                           [10.0, 20.0, 5.0], [1.0, 1.0, 1.0])
    sol = solve(build.model)
    assert sol.status is Status.OPTIMAL
    acc = compute_acceptance(BidLadder((4.0, 9.0, 16.0)),
                             np.array([10.0, 20.0, 5.0]))
    for t in range(T):
        vols = np.array([sol.value(build.vmap.get("afrr_pos", f"bid{k}", t))
                         for k in range(3)])
        top = int(np.max(np.nonzero(acc[t])[0]))
        assert vols[top] == pytest.approx(5.0, abs=1e-7)
        assert np.abs(np.delete(vols, top)).max() <= 1e-7


def test_block_linked_bids_are_constant_within_block():
    T = 8
    build = _afrr_instance(T, (4.0, 9.0), (3.0, 8.0),
                           np.linspace(6.0, 20.0, T), np.full(T, 1.0),
                           block_hours=4)
    sol = solve(build.model)
    assert sol.status is Status.OPTIMAL
    for k in range(2):
        vals = [sol.value(build.vmap.get("afrr_pos", f"bid{k}", t))
                for t in range(T)]
        for blk in (vals[:4], vals[4:]):
            assert max(blk) - min(blk) <= 1e-9


def test_bidding_requires_reserve_variables():
    build = build_base_model(_reserve_gen_network(10.0))
    afrr = AfrrMarket(BidLadder((5.0,)), BidLadder((5.0,)), np.full(1, 9.0),
                      np.full(1, 9.0))
    with pytest.raises(ModelError):
        add_afrr_bidding(build, afrr, [AfrrParticipant("g", "generator")])


def test_price_taker_tail_beyond_bid_window():
    T = 4
    prices = np.full(T, 50.0)
    build = build_base_model(_sell_portfolio(T))
    add_dam_bidding(build, DamMarket(BidLadder((DAM_FLOOR,)), prices),
                    side="sell", window=2)
    assert build.vmap.has("dam", "bid0", 1)
    assert not build.vmap.has("dam", "bid0", 2)
    sol = solve(build.model)
    assert sol.status is Status.OPTIMAL
    for t in range(T):
        assert sol.value(build.vmap.get("dam", "net", t)) \
            == pytest.approx(10.0, abs=1e-7)
    assert sol.objective_value == pytest.approx(
        10.0 * 10.0 * T - 50.0 * 10.0 * T, abs=1e-6)


def test_activation_simulation_clean_on_solved_instances():
    rng = np.random.default_rng(2718)
    for _ in range(5):
        T = 6
        net = random_portfolio(rng, T)
        mcfg = market_config(net, T, rng, with_afrr=True)
        scen = Scenario("s", 1.0,
                        {TRAJ_DAM: np.round(rng.uniform(5, 85, T), 3)})
        build = build_scenario_replica(net, mcfg, scen)
        sol = solve(build.model)
        assert sol.status is Status.OPTIMAL
        assert simulate_activation(build, sol.values) == []


def test_activation_simulation_catches_overcommitment():
    rng = np.random.default_rng(99)
    T = 4
    net = small_network(T, demand=3.0)
    mcfg = market_config(net, T, rng, with_afrr=True)
    scen = Scenario("s", 1.0, {TRAJ_DAM: np.round(rng.uniform(5, 85, T), 3)})
    build = build_scenario_replica(net, mcfg, scen)
    sol = solve(build.model)
    assert sol.status is Status.OPTIMAL
    tampered = dict(sol.values)
    tampered[build.vmap.get("bess", "afrr_pos", 2)] = 40.0
    viols = simulate_activation(build, tampered)
    assert viols
    assert all(v.t == 2 and v.asset == "bess" and v.direction == "pos"
               for v in viols)

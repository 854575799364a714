"""Scenario trees: replica wiring, bid coupling across scenarios, and the
probability-weighted objective."""
from __future__ import annotations

import numpy as np
import pytest

from support import (START, market_config, price_scenarios, random_portfolio,
                     small_network)
from ucbid.markets import DAM_FLOOR, BidLadder, ModelError
from ucbid.milp import HighsSolver, Status
from ucbid.portfolio import (Bus, CommittableGenerator, FixedLoad,
                             GridConnection, PortfolioNetwork, TimeIndex)
from ucbid.stochastic import (TRAJ_DAM, DamConfig, FixedBids, MarketConfig,
                              Scenario, ScenarioSet, bid_matrix,
                              build_scenario_replica, build_stochastic_model,
                              combine_scenarios, expected_objective)

solve = HighsSolver().solve_milp


def _clone_scenarios(traj, probs):
    return ScenarioSet([Scenario(f"s{i}", p, dict(traj))
                        for i, p in enumerate(probs)])


def test_scenario_set_validation():
    with pytest.raises(ModelError):
        ScenarioSet([])
    with pytest.raises(ModelError):
        ScenarioSet([Scenario("a", 0.4), Scenario("b", 0.55)])
    with pytest.raises(ModelError):
        ScenarioSet([Scenario("a", -0.1), Scenario("b", 1.1)])


def test_identical_scenarios_reduce_to_deterministic():
    rng = np.random.default_rng(515)
    for _ in range(6):
        T = 6
        net = random_portfolio(rng, T)
        mcfg = market_config(net, T, rng)
        traj = price_scenarios(rng, T, 1).scenarios[0].trajectories
        det = solve(build_scenario_replica(net, mcfg, Scenario("d", 1.0,
                                                               traj)).model)
        assert det.status is Status.OPTIMAL
        sset = _clone_scenarios(traj, (0.2, 0.3, 0.5))
        sto = solve(build_stochastic_model(net, sset, mcfg).model)
        assert sto.status is Status.OPTIMAL
        assert sto.objective_value == pytest.approx(det.objective_value,
                                                    abs=1e-9)


def test_first_stage_bids_agree_across_scenarios():
    rng = np.random.default_rng(4040)
    T = 24
    net = small_network(T, demand=4.0, gen_mc=30.0)
    mcfg = market_config(net, T, rng, with_afrr=True)
    sset = price_scenarios(rng, T, 5)
    build = build_stochastic_model(net, sset, mcfg)
    sol = solve(build.model)
    assert sol.status is Status.OPTIMAL
    for comp, levels in (("dam", 4), ("afrr_pos", 3), ("afrr_neg", 3)):
        mats = [bid_matrix(b, sol, comp) for b in build.builds]
        for other in mats[1:]:
            assert np.abs(other - mats[0]).max() <= 1e-7


def test_rejected_in_every_scenario_is_fixed_zero():
    rng = np.random.default_rng(77)
    T = 6
    net = small_network(T, demand=2.0)
    mcfg = market_config(net, T, rng, with_afrr=False)
    # clearing prices stay below the 40 EUR ladder level in every scenario
    scens = ScenarioSet([
        Scenario(f"s{i}", 0.2,
                 {TRAJ_DAM: np.round(rng.uniform(-10.0, 35.0, T), 3)})
        for i in range(5)])
    build = build_stochastic_model(net, scens, mcfg)
    sol = solve(build.model)
    assert sol.status is Status.OPTIMAL
    top = len(mcfg.dam.ladder) - 1
    for b in build.builds:
        for t in range(T):
            assert sol.value(b.vmap.get("dam", f"bid{top}", t)) == 0.0


def _price_spread_instance():
    """Sell 10 MW at the floor level; scenario value is linear in price."""
    T = 1
    net = PortfolioNetwork(
        "spread", TimeIndex(START, T),
        buses=[Bus("el", "electricity")],
        generators=[CommittableGenerator("g", "el", p_max=10.0,
                                         marginal_cost=0.0)],
        loads=[FixedLoad("l", "el", np.zeros(T))],
        grid=GridConnection("el", 25.0))
    mcfg = MarketConfig(dam=DamConfig(BidLadder((DAM_FLOOR,)),
                                      np.zeros(T), side="sell"))
    return net, mcfg


def test_expected_objective_hand_check():
    net, mcfg = _price_spread_instance()
    sset = ScenarioSet([
        Scenario("lo", 0.25, {TRAJ_DAM: np.array([10.0])}),
        Scenario("hi", 0.75, {TRAJ_DAM: np.array([20.0])})])
    build = build_stochastic_model(net, sset, mcfg)
    sol = solve(build.model)
    assert sol.status is Status.OPTIMAL
    assert build.scenario_objective(sol, 0) == pytest.approx(-100.0,
                                                             abs=1e-9)
    assert build.scenario_objective(sol, 1) == pytest.approx(-200.0,
                                                             abs=1e-9)
    assert sol.objective_value == pytest.approx(-175.0, abs=1e-9)
    assert expected_objective(build, sol) == pytest.approx(-175.0, abs=1e-9)


def test_expected_objective_matches_weighted_sum():
    rng = np.random.default_rng(321)
    T = 6
    net = random_portfolio(rng, T)
    mcfg = market_config(net, T, rng)
    sset = price_scenarios(rng, T, 4)
    build = build_stochastic_model(net, sset, mcfg)
    sol = solve(build.model)
    assert sol.status is Status.OPTIMAL
    manual = sum(s.probability * build.scenario_objective(sol, i)
                 for i, s in enumerate(sset))
    assert expected_objective(build, sol) == pytest.approx(manual, rel=1e-12)
    assert sol.objective_value == pytest.approx(
        manual, rel=1e-6, abs=1e-6)


def test_stochastic_value_bounded_by_clairvoyance():
    rng = np.random.default_rng(888)
    for _ in range(4):
        T = 6
        net = random_portfolio(rng, T)
        mcfg = market_config(net, T, rng)
        sset = price_scenarios(rng, T, 3)
        build = build_stochastic_model(net, sset, mcfg)
        sol = solve(build.model)
        assert sol.status is Status.OPTIMAL
        ws = 0.0
        for s in sset:
            rep = solve(build_scenario_replica(
                net, mcfg, Scenario(s.label, 1.0, s.trajectories)).model)
            assert rep.status is Status.OPTIMAL
            ws += s.probability * rep.objective_value
        assert sol.objective_value >= ws - 1e-7


def test_combine_scenarios_takes_products():
    a = ScenarioSet([Scenario("x", 0.5, {"pa": np.ones(2)}),
                     Scenario("y", 0.5, {"pa": np.zeros(2)})])
    b = ScenarioSet([Scenario("u", 0.3, {"pb": np.ones(2)}),
                     Scenario("v", 0.7, {"pb": np.full(2, 2.0)})])
    joint = combine_scenarios([("a", a), ("b", b)])
    assert len(joint) == 4
    assert sorted(s.probability for s in joint) == [0.15, 0.15, 0.35, 0.35]
    labels = {s.label for s in joint}
    assert labels == {"a:x|b:u", "a:x|b:v", "a:y|b:u", "a:y|b:v"}
    merged = next(s for s in joint if s.label == "a:x|b:v")
    assert merged.probability == pytest.approx(0.5 * 0.7)
    assert set(merged.trajectories) == {"pa", "pb"}
    assert merged.trajectories["pb"][0] == 2.0


def test_combine_scenarios_rejects_key_collision():
    a = ScenarioSet([Scenario("x", 1.0, {"shared": np.ones(2)})])
    b = ScenarioSet([Scenario("u", 1.0, {"shared": np.zeros(2)})])
    with pytest.raises(ModelError):
        combine_scenarios([("a", a), ("b", b)])


def test_fixed_bids_pin_values_and_leave_nan_free():
    net, mcfg = _price_spread_instance()
    sset = ScenarioSet([Scenario("only", 1.0,
                                 {TRAJ_DAM: np.array([30.0])})])
    fixed = FixedBids(dam=np.array([[4.0]]))
    build = build_stochastic_model(net, sset, mcfg, fixed_bids=fixed)
    sol = solve(build.model)
    assert sol.status is Status.OPTIMAL
    assert sol.value(build.builds[0].vmap.get("dam", "bid0", 0)) == 4.0
    free = build_stochastic_model(net, sset, mcfg,
                                  fixed_bids=FixedBids(
                                      dam=np.array([[np.nan]])))
    sol2 = solve(free.model)
    assert sol2.value(free.builds[0].vmap.get("dam", "bid0", 0)) \
        == pytest.approx(10.0, abs=1e-7)


def test_fixed_bids_shape_checked():
    net, mcfg = _price_spread_instance()
    sset = ScenarioSet([Scenario("only", 1.0,
                                 {TRAJ_DAM: np.array([30.0])})])
    with pytest.raises(ModelError):
        build_stochastic_model(net, sset, mcfg,
                               fixed_bids=FixedBids(dam=np.zeros((1, 3))))
    with pytest.raises(ModelError):
        build_stochastic_model(net, sset, mcfg,
                               fixed_bids=FixedBids(dam=np.zeros((5, 1))))


def test_balance_slack_absorbs_uncovered_load():
    T = 2
    net = PortfolioNetwork(
        "short", TimeIndex(START, T),
        buses=[Bus("el", "electricity")],
        loads=[FixedLoad("l", "el", np.full(T, 3.0))],
        grid=GridConnection("el", 25.0))
    mcfg = MarketConfig(dam=DamConfig(BidLadder((DAM_FLOOR, 0.0)),
                                      np.full(T, -600.0)))
    sset = ScenarioSet([Scenario("only", 1.0, {})])
    hard = build_stochastic_model(net, sset, mcfg)
    assert solve(hard.model).status is Status.INFEASIBLE
    soft = build_stochastic_model(net, sset, mcfg,
                                  balance_slack_penalty=1000.0)
    sol = solve(soft.model)
    assert sol.status is Status.OPTIMAL
    assert sol.objective_value == pytest.approx(1000.0 * 3.0 * T, rel=1e-9)
    deficits = {k: sol.value(v) for k, v in soft.balance_slacks.items()
                if k[3] == "deficit"}
    assert sum(deficits.values()) == pytest.approx(3.0 * T, abs=1e-7)


def test_bid_matrix_reports_zero_rows_past_window():
    rng = np.random.default_rng(55)
    T = 4
    net = small_network(T, demand=3.0)
    mcfg = market_config(net, T, rng, with_afrr=False, side="sell", window=2)
    sset = price_scenarios(rng, T, 2, with_afrr=False)
    build = build_stochastic_model(net, sset, mcfg)
    sol = solve(build.model)
    assert sol.status is Status.OPTIMAL
    mat = bid_matrix(build.builds[0], sol, "dam")
    assert mat.shape == (T, len(mcfg.dam.ladder))
    assert np.all(mat[2:] == 0.0)

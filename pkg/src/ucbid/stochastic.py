"""Scenario-based stochastic extension of the deterministic bidding model.

The extensive form replicates the whole portfolio-plus-markets model once per
scenario, weights each replica's objective by the scenario probability, and
couples the first-stage bid variables across scenarios with chained
equalities (every scenario tied to scenario 0).  Bid levels rejected in every
scenario are pinned to zero so they cannot float freely.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .milp import LinearExpression, Model, ModelError, Sense, Solution, VariableDef
from .markets import (AfrrMarket, AfrrParticipant, BidLadder, DamMarket,
                      add_afrr_bess_reserve, add_afrr_bidding,
                      add_afrr_generator_reserve, add_afrr_link_headroom,
                      add_dam_bidding)
from .portfolio import PortfolioBuild, PortfolioNetwork, build_base_model

TRAJ_DAM = "dam_price"
TRAJ_AFRR_POS = "afrr_pos_price"
TRAJ_AFRR_NEG = "afrr_neg_price"

PROB_TOL = 1e-9


def load_trajectory_key(load_name: str) -> str:
    return f"load:{load_name}"


@dataclass(frozen=True, eq=False)
class Scenario:
    label: str
    probability: float
    trajectories: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class ScenarioSet:
    scenarios: list[Scenario]

    def __post_init__(self) -> None:
        if not self.scenarios:
            raise ModelError("scenario set must not be empty")
        if any(s.probability < 0 for s in self.scenarios):
            raise ModelError("scenario probabilities must be non-negative")
        total = sum(s.probability for s in self.scenarios)
        if abs(total - 1.0) > PROB_TOL:
            raise ModelError(f"scenario probabilities sum to {total!r}, not 1")

    def __len__(self) -> int:
        return len(self.scenarios)

    def __iter__(self):
        return iter(self.scenarios)


@dataclass(frozen=True)
class StagePartition:
    """Bid components held equal across scenarios; the rest is recourse."""

    coupled_components: tuple[str, ...] = ("dam", "afrr_pos", "afrr_neg")


@dataclass
class DamConfig:
    ladder: BidLadder
    prices: np.ndarray
    floor: float = -500.0
    side: str = "both"
    window: int | None = None   # ladder steps; price-taker exchange beyond


@dataclass
class AfrrConfig:
    pos_ladder: BidLadder
    neg_ladder: BidLadder
    pos_prices: np.ndarray
    neg_prices: np.ndarray
    participants: list[AfrrParticipant]
    block_hours: int = 1


@dataclass
class MarketConfig:
    dam: DamConfig | None = None
    afrr: AfrrConfig | None = None


@dataclass
class FixedBids:
    """Bid volumes fixed from an earlier stage; NaN entries stay free.

    Arrays cover the first ``shape[0]`` steps; later steps remain free.
    """

    dam: np.ndarray | None = None
    afrr_pos: np.ndarray | None = None
    afrr_neg: np.ndarray | None = None


@dataclass
class StochasticBuild:
    model: Model
    builds: list[PortfolioBuild]
    scenario_set: ScenarioSet
    partition: StagePartition
    # (scenario index, bus, t, "deficit"|"surplus") -> slack variable
    balance_slacks: dict = field(default_factory=dict)

    def scenario_objective(self, solution: Solution, idx: int) -> float:
        return self.builds[idx].total_objective().evaluate(solution.values)

    def scenario_market_objective(self, solution: Solution, idx: int) -> float:
        return self.builds[idx].market_terms.evaluate(solution.values)


def build_scenario_replica(network: PortfolioNetwork, mcfg: MarketConfig,
                           scenario: Scenario, *, model: Model | None = None,
                           prefix: str = "", weight: float = 1.0,
                           ) -> PortfolioBuild:
    """One full portfolio+markets replica driven by scenario trajectories."""
    overrides = {}
    for ld in network.loads:
        key = load_trajectory_key(ld.name)
        if key in scenario.trajectories:
            overrides[ld.name] = scenario.trajectories[key]
    build = build_base_model(network, model=model, prefix=prefix,
                             weight=weight, demand_overrides=overrides)
    if mcfg.afrr is not None:
        for part in mcfg.afrr.participants:
            if part.kind == "generator":
                add_afrr_generator_reserve(build, part.asset)
                if part.via_link:
                    add_afrr_link_headroom(build, part.asset, part.via_link)
            elif part.kind == "storage":
                add_afrr_bess_reserve(build, part.asset)
            else:
                raise ModelError(f"unknown participant kind {part.kind!r}")
    if mcfg.dam is not None:
        prices = scenario.trajectories.get(TRAJ_DAM, mcfg.dam.prices)
        dam = DamMarket(mcfg.dam.ladder, prices, mcfg.dam.floor)
        add_dam_bidding(build, dam, fix_rejected=False, side=mcfg.dam.side,
                        window=mcfg.dam.window)
    if mcfg.afrr is not None:
        afrr = AfrrMarket(
            mcfg.afrr.pos_ladder, mcfg.afrr.neg_ladder,
            scenario.trajectories.get(TRAJ_AFRR_POS, mcfg.afrr.pos_prices),
            scenario.trajectories.get(TRAJ_AFRR_NEG, mcfg.afrr.neg_prices),
            mcfg.afrr.block_hours)
        add_afrr_bidding(build, afrr, mcfg.afrr.participants,
                         fix_rejected=False)
    return build


def _bid_components(build: PortfolioBuild) -> dict[str, int]:
    comps: dict[str, int] = {}
    if build.dam_ladder is not None:
        comps["dam"] = len(build.dam_ladder)
    if build.afrr_pos_ladder is not None:
        comps["afrr_pos"] = len(build.afrr_pos_ladder)
        comps["afrr_neg"] = len(build.afrr_neg_ladder)
    return comps


def _component_steps(build: PortfolioBuild, comp: str) -> int:
    """Steps for which a market component has bid variables."""
    T = build.network.time.steps
    if comp == "dam" and build.dam_window is not None:
        return min(build.dam_window, T)
    return T


def build_stochastic_model(network: PortfolioNetwork,
                           scenario_set: ScenarioSet,
                           market_config: MarketConfig,
                           partition: StagePartition | None = None,
                           fixed_bids: FixedBids | None = None,
                           reserve_slack_penalty: float | None = None,
                           balance_slack_penalty: float | None = None,
                           ) -> StochasticBuild:
    part = partition or StagePartition()
    model = Model(f"{network.name}_x{len(scenario_set)}")
    builds: list[PortfolioBuild] = []
    for i, sc in enumerate(scenario_set):
        rep = build_scenario_replica(
            network, market_config, sc, model=model, prefix=f"s{i}_",
            weight=sc.probability)
        rep.scenario_label = sc.label
        builds.append(rep)
    T = network.time.steps
    comps = _bid_components(builds[0])

    # non-anticipativity: chain every scenario's bids to scenario 0
    for comp in part.coupled_components:
        if comp not in comps:
            continue
        Tc = _component_steps(builds[0], comp)
        for s in range(1, len(builds)):
            for t in range(Tc):
                for j in range(comps[comp]):
                    a = builds[s].vmap.get(comp, f"bid{j}", t)
                    b = builds[0].vmap.get(comp, f"bid{j}", t)
                    model.add_constraint(LinearExpression({a: 1.0, b: -1.0}),
                                         Sense.EQ, 0.0,
                                         f"nonant_{comp}_{t}_{j}_s{s}")
        # the hourly buy/sell switch is part of the same shared decision;
        # tying it lets the presolver collapse the replicated sign rows
        if builds[0].vmap.has(comp, "sign", 0):
            for s in range(1, len(builds)):
                for t in range(Tc):
                    a = builds[s].vmap.get(comp, "sign", t)
                    b = builds[0].vmap.get(comp, "sign", t)
                    model.add_constraint(LinearExpression({a: 1.0, b: -1.0}),
                                         Sense.EQ, 0.0,
                                         f"nonant_{comp}_sign_{t}_s{s}")

    # bid levels rejected in every scenario are forced to zero
    if "dam" in comps:
        Tw = _component_steps(builds[0], "dam")
        any_gamma = np.zeros((T, comps["dam"]))
        for b in builds:
            any_gamma += b.dam_gamma
        for t in range(Tw):
            for j in range(comps["dam"]):
                if any_gamma[t, j] == 0.0:
                    for b in builds:
                        model.fix(b.vmap.get("dam", f"bid{j}", t), 0.0)
    if "afrr_pos" in comps:
        for comp, attr in (("afrr_pos", "afrr_beta_pos"),
                           ("afrr_neg", "afrr_beta_neg")):
            any_beta = np.zeros((T, comps[comp]))
            for b in builds:
                any_beta += getattr(b, attr)
            for t in range(T):
                for k in range(comps[comp]):
                    if any_beta[t, k] == 0.0:
                        for b in builds:
                            model.fix(b.vmap.get(comp, f"bid{k}", t), 0.0)

    # earlier-stage decisions override both freedom and forcing
    if fixed_bids is not None:
        for comp, arr in (("dam", fixed_bids.dam),
                          ("afrr_pos", fixed_bids.afrr_pos),
                          ("afrr_neg", fixed_bids.afrr_neg)):
            if arr is None:
                continue
            if comp not in comps:
                raise ModelError(f"fixed bids given for absent market {comp}")
            arr = np.asarray(arr, dtype=float)
            Tc = _component_steps(builds[0], comp)
            if arr.ndim != 2 or arr.shape[1] != comps[comp] or \
                    arr.shape[0] > Tc:
                raise ModelError(f"fixed bid array for {comp} has shape "
                                 f"{arr.shape}, expected (<= {Tc}, {comps[comp]})")
            for t in range(arr.shape[0]):
                for j in range(comps[comp]):
                    v = arr[t, j]
                    if math.isnan(v):
                        continue
                    for b in builds:
                        model.fix(b.vmap.get(comp, f"bid{j}", t), float(v))

    if reserve_slack_penalty is not None and "afrr_pos" in comps:
        for i, b in enumerate(builds):
            for side, rows in (("pos", b.reserve_rows_pos),
                               ("neg", b.reserve_rows_neg)):
                for t, row in rows.items():
                    slack = model.add_variable(
                        VariableDef(lower=0.0, upper=math.inf),
                        f"s{i}_resslack_{side}_{t}")
                    model.constraints[row].expression.add_term(slack, -1.0)
                    pen = LinearExpression({slack: reserve_slack_penalty})
                    b.cost_terms.add(pen)
                    model.add_objective(pen, b.weight)

    # frozen positions can become undeliverable once prices or demand turn
    # out differently than planned; penalized imbalance keeps the settlement
    # solvable and every MWh of deviation visible
    balance_slacks: dict = {}
    if balance_slack_penalty is not None:
        for i, b in enumerate(builds):
            for (bus, t), row in b.balance_rows.items():
                for sign, tag in ((1.0, "deficit"), (-1.0, "surplus")):
                    slack = model.add_variable(
                        VariableDef(lower=0.0, upper=math.inf),
                        f"s{i}_balslack_{bus}_{t}_{tag}")
                    model.constraints[row].expression.add_term(slack, sign)
                    pen = LinearExpression({slack: balance_slack_penalty})
                    b.cost_terms.add(pen)
                    model.add_objective(pen, b.weight)
                    balance_slacks[(i, bus, t, tag)] = slack

    return StochasticBuild(model, builds, scenario_set, part,
                           balance_slacks=balance_slacks)


def combine_scenarios(per_input: list[tuple[str, ScenarioSet]]) -> ScenarioSet:
    """Cartesian product of independently clustered inputs.

    Probabilities multiply; trajectory dicts are merged and must not collide.
    """
    if not per_input:
        raise ModelError("combine_scenarios needs at least one input")
    combined: list[Scenario] = []
    for combo in itertools.product(*(ss.scenarios for _, ss in per_input)):
        prob = 1.0
        label_parts = []
        trajectories: dict[str, np.ndarray] = {}
        for (input_name, _), sc in zip(per_input, combo):
            prob *= sc.probability
            label_parts.append(f"{input_name}:{sc.label}")
            for key, arr in sc.trajectories.items():
                if key in trajectories:
                    raise ModelError(f"trajectory key {key!r} provided by "
                                     f"more than one input")
                trajectories[key] = arr
        combined.append(Scenario("|".join(label_parts), prob, trajectories))
    return ScenarioSet(combined)


def expected_objective(build: StochasticBuild, solution: Solution) -> float:
    """Probability-weighted recomputation of the per-scenario objectives."""
    return sum(sc.probability * build.scenario_objective(solution, i)
               for i, sc in enumerate(build.scenario_set))


def bid_matrix(build: PortfolioBuild, solution: Solution, comp: str,
               steps: int | None = None) -> np.ndarray:
    """Solution bid volumes as a (steps, levels) array for one market.

    Rows past the component's bid window have no variables and read zero.
    """
    sizes = _bid_components(build)
    if comp not in sizes:
        raise ModelError(f"build has no market component {comp!r}")
    T = steps if steps is not None else build.network.time.steps
    out = np.zeros((T, sizes[comp]))
    for t in range(min(T, _component_steps(build, comp))):
        for j in range(sizes[comp]):
            out[t, j] = solution.value(build.vmap.get(comp, f"bid{j}", t))
    return out

"""Three-stage rolling-horizon bidding driver.

Per delivery day D the sequence is:

  Stage 1 (before the reserve auction closes, 09:00 on D-1): every input is
  uncertain; the full stochastic model picks the reserve capacity ladders.
  Stage 2 (before the day-ahead auction closes, 12:00 on D-1): reserve bids
  are frozen at their Stage 1 values and scored against the cleared reserve
  prices; energy prices and heat demand stay scenario-based.
  Stage 3 (delivery): one deterministic solve against realizations with all
  bids frozen; its schedule is what gets executed and settled.

The optimization horizon extends past the delivery day (36 h by default)
purely to damp storage end-of-day effects.  The day's auctions only cover
the day, so the ladder mechanisms stop at the apply window: beyond it the
day-ahead exchange turns into a plain price-taker position valued at the
scenario's forecast price (tomorrow's auction has not closed, and a
must-run plant still needs its grid sink in those hours), while reserve
capacity is pinned to zero, which is always feasible.  Settled cash flows
cover the apply window only and match the Stage 3 objective's market terms
over that window exactly.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from datetime import date, datetime, time
from typing import Callable, Mapping, Protocol

import numpy as np

from .markets import AfrrParticipant, BidLadder
from .milp import (LinearExpression, MilpOptions, ModelError, Solution,
                   Status, VariableDef, get_solver)
from .portfolio import PortfolioNetwork, TimeIndex
from .stochastic import (AfrrConfig, DamConfig, FixedBids, MarketConfig,
                         Scenario, ScenarioSet, StochasticBuild,
                         TRAJ_AFRR_NEG, TRAJ_AFRR_POS, TRAJ_DAM,
                         bid_matrix, build_stochastic_model,
                         combine_scenarios, load_trajectory_key)

DEFAULT_SLACK_PENALTY = 10_000.0


class StageError(RuntimeError):
    """A stage could not be solved; carries the infeasibility report."""

    def __init__(self, message: str, report: "InfeasibilityReport | None" = None):
        super().__init__(message)
        self.report = report


class DataGapError(RuntimeError):
    """A required input series is missing or does not cover the horizon."""


@dataclass
class StageConfig:
    afrr_closure: time = time(9, 0)
    dam_closure: time = time(12, 0)
    horizon_hours: int = 36
    apply_hours: int = 24
    solver: str = "builtin"
    milp: MilpOptions = field(default_factory=MilpOptions)
    slack_penalty: float | None = None

    def __post_init__(self) -> None:
        if self.afrr_closure >= self.dam_closure:
            raise ValueError("reserve auction must close before the "
                             "day-ahead auction")
        if self.horizon_hours < self.apply_hours:
            raise ValueError("horizon must cover the apply window")
        if self.apply_hours < 1:
            raise ValueError("apply window must be at least one hour")


@dataclass
class MarketSpec:
    """Static market structure: ladders, reserve providers, block length."""

    dam_ladder: BidLadder
    dam_floor: float = -500.0
    dam_side: str = "both"
    afrr_pos_ladder: BidLadder | None = None
    afrr_neg_ladder: BidLadder | None = None
    participants: list[AfrrParticipant] = field(default_factory=list)
    afrr_block_hours: int = 1

    @property
    def has_afrr(self) -> bool:
        return self.afrr_pos_ladder is not None

    def __post_init__(self) -> None:
        if (self.afrr_pos_ladder is None) != (self.afrr_neg_ladder is None):
            raise ValueError("reserve ladders must be given for both "
                             "directions or neither")
        if self.has_afrr and not self.participants:
            raise ValueError("reserve ladders without reserve providers")
        if self.dam_side not in ("both", "sell"):
            raise ValueError(f"unknown dam_side {self.dam_side!r}")


@dataclass
class DayState:
    storage_levels: dict[str, float] = field(default_factory=dict)
    commitment: dict[str, bool] = field(default_factory=dict)
    dam_position: np.ndarray | None = None      # accepted net MW per hour
    afrr_reserved_pos: np.ndarray | None = None
    afrr_reserved_neg: np.ndarray | None = None


def initial_state(network: PortfolioNetwork) -> DayState:
    return DayState(
        storage_levels={s.name: s.e_initial for s in network.storage_units},
        commitment={g.name: g.initially_committed for g in network.generators})


@dataclass
class ShortfallEvent:
    # "balance" (diagnosis), "balance_deficit"/"balance_surplus" (penalized
    # settlement slack), "reserve_pos"/"reserve_neg"
    kind: str
    where: str      # bus name or market side
    t: int
    amount: float


@dataclass
class InfeasibilityReport:
    events: list[ShortfallEvent]

    def __str__(self) -> str:
        lines = [f"  {e.kind} at {e.where}, t={e.t}: {e.amount:.4f}"
                 for e in self.events[:20]]
        more = len(self.events) - len(lines)
        if more > 0:
            lines.append(f"  ... and {more} more")
        return "\n".join(lines) or "  (no localized cause found)"


@dataclass
class StageResult:
    stage: int
    status: Status
    objective: float
    bids: dict[str, np.ndarray]
    schedules: dict[str, dict[str, np.ndarray]]
    market_value: float          # probability-weighted market objective terms
    solution: Solution
    stoch: StochasticBuild
    shortfalls: list[ShortfallEvent] = field(default_factory=list)


class ForecastProvider(Protocol):
    """Per-day data feeds for the rolling driver.

    Scenario trajectory keys: ``dam_price``, ``afrr_pos_price``,
    ``afrr_neg_price`` and ``load:<name>`` for every portfolio load.  All
    arrays span the full optimization horizon.
    """

    def stage1(self, day: date) -> dict[str, ScenarioSet]: ...

    def stage2(self, day: date) -> dict[str, ScenarioSet]: ...

    def cleared_afrr(self, day: date) -> tuple[np.ndarray, np.ndarray]: ...

    def realized(self, day: date) -> dict[str, np.ndarray]: ...


class PerfectProvider:
    """Single-scenario feeds equal to the realization: clairvoyant inputs.

    ``series`` maps trajectory keys to full-backtest hourly arrays indexed
    from ``origin`` midnight.
    """

    def __init__(self, origin: date, series: Mapping[str, np.ndarray],
                 horizon_hours: int = 36):
        self.origin = origin
        self.series = {k: np.asarray(v, dtype=float) for k, v in series.items()}
        self.horizon = horizon_hours

    def _slice(self, key: str, day: date) -> np.ndarray:
        if key not in self.series:
            raise DataGapError(f"no input series {key!r}")
        start = (day - self.origin).days * 24
        stop = start + self.horizon
        arr = self.series[key]
        if start < 0 or stop > len(arr):
            raise DataGapError(f"series {key!r} does not cover "
                               f"{day.isoformat()} +{self.horizon}h "
                               f"(rows {start}..{stop}, have {len(arr)})")
        return arr[start:stop]

    def _single(self, day: date, keys: list[str]) -> ScenarioSet:
        traj = {k: self._slice(k, day) for k in keys}
        return ScenarioSet([Scenario(day.isoformat(), 1.0, traj)])

    def load_keys(self) -> list[str]:
        return [k for k in self.series if k.startswith("load:")]

    def stage1(self, day: date) -> dict[str, ScenarioSet]:
        out = {"dam": self._single(day, [TRAJ_DAM])}
        if TRAJ_AFRR_POS in self.series:
            out["afrr"] = self._single(day, [TRAJ_AFRR_POS, TRAJ_AFRR_NEG])
        loads = self.load_keys()
        if loads:
            out["heat"] = self._single(day, loads)
        return out

    def stage2(self, day: date) -> dict[str, ScenarioSet]:
        out = {"dam": self._single(day, [TRAJ_DAM])}
        loads = self.load_keys()
        if loads:
            out["heat"] = self._single(day, loads)
        return out

    def cleared_afrr(self, day: date) -> tuple[np.ndarray, np.ndarray]:
        return (self._slice(TRAJ_AFRR_POS, day), self._slice(TRAJ_AFRR_NEG, day))

    def realized(self, day: date) -> dict[str, np.ndarray]:
        keys = [TRAJ_DAM, *self.load_keys()]
        return {k: self._slice(k, day) for k in keys}


# ---------------------------------------------------------------------------
# model assembly helpers


def _day_network(base: PortfolioNetwork, day: date, cfg: StageConfig,
                 state: DayState) -> PortfolioNetwork:
    t0 = datetime.combine(day, time(0, 0))
    steps = cfg.horizon_hours
    loads = [dataclasses.replace(ld, demand=np.zeros(steps))
             for ld in base.loads]
    net = dataclasses.replace(
        base, time=TimeIndex(t0, steps, 1.0), loads=loads)
    if state.storage_levels:
        levels = {}
        for s in net.storage_units:
            lvl = state.storage_levels.get(s.name, s.e_initial)
            if lvl < -1e-6 or lvl > s.e_max + 1e-6:
                raise StageError(f"carried storage level {lvl:.4f} for "
                                 f"{s.name!r} is outside [0, {s.e_max}]")
            levels[s.name] = min(max(lvl, 0.0), s.e_max)
        net = net.with_storage_levels(levels)
    if state.commitment:
        net = net.with_commitment(state.commitment)
    return net


def _check_coverage(network: PortfolioNetwork, sets: list[ScenarioSet],
                    realized: Mapping[str, np.ndarray] | None,
                    horizon: int) -> None:
    """Every load needs a trajectory in every scenario (or the realized map)."""
    for ld in network.loads:
        key = load_trajectory_key(ld.name)
        if realized is not None:
            if key not in realized:
                raise DataGapError(f"realized data is missing {key!r}")
            if len(realized[key]) < horizon:
                raise DataGapError(f"realized {key!r} spans "
                                   f"{len(realized[key])} h < {horizon} h")
            continue
        covered = any(key in sc.trajectories for ss in sets for sc in ss)
        if not covered:
            raise DataGapError(f"no scenario set supplies {key!r}")
    for ss in sets:
        for sc in ss:
            for key, arr in sc.trajectories.items():
                if len(arr) < horizon:
                    raise DataGapError(f"trajectory {key!r} in scenario "
                                       f"{sc.label!r} spans {len(arr)} h "
                                       f"< {horizon} h")


def _market_config(spec: MarketSpec, dam_prices: np.ndarray,
                   afrr_pos: np.ndarray | None,
                   afrr_neg: np.ndarray | None,
                   window: int | None = None) -> MarketConfig:
    dam = DamConfig(spec.dam_ladder, np.asarray(dam_prices, dtype=float),
                    spec.dam_floor, side=spec.dam_side, window=window)
    afrr = None
    if spec.has_afrr:
        afrr = AfrrConfig(spec.afrr_pos_ladder, spec.afrr_neg_ladder,
                          np.asarray(afrr_pos, dtype=float),
                          np.asarray(afrr_neg, dtype=float),
                          spec.participants, spec.afrr_block_hours)
    return MarketConfig(dam=dam, afrr=afrr)


def _window_fixed(base: np.ndarray | None, horizon: int, levels: int,
                  apply_hours: int) -> np.ndarray:
    """Fix bids to earlier-stage values inside the window, zero beyond it."""
    arr = np.full((horizon, levels), np.nan)
    if apply_hours < horizon:
        arr[apply_hours:, :] = 0.0
    if base is not None:
        w = min(apply_hours, horizon, base.shape[0])
        arr[:w, :] = base[:w]
    return arr


def _solve(stoch: StochasticBuild, cfg: StageConfig, stage: int
           ) -> tuple[Solution, list[ShortfallEvent]]:
    solver = get_solver(cfg.solver)
    sol = solver.solve_milp(stoch.model, cfg.milp)
    if sol.status in (Status.OPTIMAL, Status.GAP_LIMIT):
        shortfalls = _slack_events(stoch, sol)
        return sol, shortfalls
    if sol.status is Status.UNBOUNDED:
        raise StageError(f"stage {stage} model is unbounded; check price "
                         f"signs and grid capacity")
    report = diagnose_infeasibility(stoch, cfg)
    raise StageError(f"stage {stage} infeasible:\n{report}", report)


def _slack_events(stoch: StochasticBuild, sol: Solution
                  ) -> list[ShortfallEvent]:
    events = []
    for i, b in enumerate(stoch.builds):
        for side in ("pos", "neg"):
            for t in range(b.network.time.steps):
                name = f"s{i}_resslack_{side}_{t}"
                try:
                    ref = stoch.model.variable(name)
                except ModelError:
                    break
                v = sol.values.get(ref, 0.0)
                if v > 1e-6:
                    events.append(ShortfallEvent(f"reserve_{side}",
                                                 b.scenario_label, t, v))
    for (i, bus, t, tag), ref in stoch.balance_slacks.items():
        v = sol.values.get(ref, 0.0)
        if v > 1e-6:
            label = stoch.builds[i].scenario_label
            events.append(ShortfallEvent(f"balance_{tag}",
                                         f"{label}:{bus}", t, v))
    return events


def diagnose_infeasibility(stoch: StochasticBuild, cfg: StageConfig
                           ) -> InfeasibilityReport:
    """Re-solve with elastic slack on balance and reserve rows to find out
    where the model breaks.  The mutated model is thrown away afterwards."""
    model = stoch.model
    slack_cols: list[tuple[ShortfallEvent, object]] = []
    obj = LinearExpression()
    for i, b in enumerate(stoch.builds):
        for (bus, t), row in b.balance_rows.items():
            for sign, tag in ((1.0, "deficit"), (-1.0, "surplus")):
                s = model.add_variable(VariableDef(lower=0.0, upper=math.inf),
                                       f"diag_{i}_{bus}_{t}_{tag}")
                model.constraints[row].expression.add_term(s, sign)
                obj.add_term(s, 1.0)
                slack_cols.append(
                    (ShortfallEvent("balance", f"{b.scenario_label}:{bus}",
                                    t, 0.0), s))
        for side, rows in (("pos", b.reserve_rows_pos),
                           ("neg", b.reserve_rows_neg)):
            for t, row in rows.items():
                s = model.add_variable(VariableDef(lower=0.0, upper=math.inf),
                                       f"diag_{i}_res{side}_{t}")
                model.constraints[row].expression.add_term(s, -1.0)
                obj.add_term(s, 1.0)
                slack_cols.append(
                    (ShortfallEvent(f"reserve_{side}", b.scenario_label,
                                    t, 0.0), s))
    model.objective = obj
    solver = get_solver(cfg.solver)
    sol = solver.solve_milp(model, cfg.milp)
    events: list[ShortfallEvent] = []
    if sol.status in (Status.OPTIMAL, Status.GAP_LIMIT):
        for ev, ref in slack_cols:
            v = sol.values.get(ref, 0.0)
            if v > 1e-6:
                events.append(dataclasses.replace(ev, amount=v))
    events.sort(key=lambda e: -e.amount)
    return InfeasibilityReport(events)


def extract_schedules(stoch: StochasticBuild, sol: Solution
                      ) -> dict[str, dict[str, np.ndarray]]:
    out: dict[str, dict[str, np.ndarray]] = {}
    for b in stoch.builds:
        net = b.network
        T = net.time.steps
        sched: dict[str, np.ndarray] = {}

        def grab(comp: str, role: str, label: str) -> None:
            if b.vmap.has(comp, role, 0):
                refs = b.vmap.series(comp, role, T)
                sched[label] = np.array([sol.values[r] for r in refs])

        for g in net.generators:
            grab(g.name, "p", f"{g.name}:p")
            grab(g.name, "commit", f"{g.name}:commit")
            grab(g.name, "afrr_pos", f"{g.name}:afrr_pos")
            grab(g.name, "afrr_neg", f"{g.name}:afrr_neg")
        for s in net.storage_units:
            grab(s.name, "p_in", f"{s.name}:charge")
            grab(s.name, "p_out", f"{s.name}:discharge")
            grab(s.name, "e", f"{s.name}:level")
            grab(s.name, "afrr_pos", f"{s.name}:afrr_pos")
            grab(s.name, "afrr_neg", f"{s.name}:afrr_neg")
        for ln in net.links:
            grab(ln.name, "flow", f"{ln.name}:flow")
        grab("dam", "net", "dam:net")
        out[b.scenario_label] = sched
    return out


def _result(stage: int, stoch: StochasticBuild, sol: Solution,
            shortfalls: list[ShortfallEvent], fixed: FixedBids | None = None
            ) -> StageResult:
    b0 = stoch.builds[0]
    T = b0.network.time.steps
    bids: dict[str, np.ndarray] = {}
    comps = []
    if b0.dam_ladder is not None:
        comps.append(("dam", len(b0.dam_ladder)))
    if b0.afrr_pos_ladder is not None:
        comps.append(("afrr_pos", len(b0.afrr_pos_ladder)))
        comps.append(("afrr_neg", len(b0.afrr_neg_ladder)))
    for comp, levels in comps:
        mat = bid_matrix(b0, sol, comp)
        carried = getattr(fixed, comp, None) if fixed is not None else None
        if carried is not None:
            # report the frozen values verbatim where they were imposed
            rows = min(carried.shape[0], T)
            mask = ~np.isnan(carried[:rows])
            mat[:rows][mask] = carried[:rows][mask]
        bids[comp] = mat
    market = sum(sc.probability * stoch.scenario_market_objective(sol, i)
                 for i, sc in enumerate(stoch.scenario_set))
    return StageResult(
        stage=stage, status=sol.status, objective=sol.objective_value,
        bids=bids, schedules=extract_schedules(stoch, sol),
        market_value=market, solution=sol, stoch=stoch,
        shortfalls=shortfalls)


# ---------------------------------------------------------------------------
# stages


def prepare_stage1(network: PortfolioNetwork, spec: MarketSpec,
                   forecasts: Mapping[str, ScenarioSet], state: DayState,
                   cfg: StageConfig, day: date | None = None
                   ) -> StochasticBuild:
    """The stage-1 model without solving it (debug exports, inspection)."""
    day = day or network.time.start.date()
    net = _day_network(network, day, cfg, state)
    H = cfg.horizon_hours
    parts = [("dam", forecasts["dam"])]
    if spec.has_afrr:
        if "afrr" not in forecasts:
            raise DataGapError("reserve market configured but no reserve "
                               "price scenarios supplied")
        parts.append(("afrr", forecasts["afrr"]))
    if "heat" in forecasts:
        parts.append(("heat", forecasts["heat"]))
    _check_coverage(net, [ss for _, ss in parts], None, H)
    combined = combine_scenarios(parts)
    sc0 = combined.scenarios[0]
    mcfg = _market_config(
        spec, sc0.trajectories[TRAJ_DAM],
        sc0.trajectories.get(TRAJ_AFRR_POS),
        sc0.trajectories.get(TRAJ_AFRR_NEG), window=cfg.apply_hours)
    fixed = FixedBids(
        afrr_pos=_window_fixed(None, H, len(spec.afrr_pos_ladder.levels),
                               cfg.apply_hours) if spec.has_afrr else None,
        afrr_neg=_window_fixed(None, H, len(spec.afrr_neg_ladder.levels),
                               cfg.apply_hours) if spec.has_afrr else None)
    return build_stochastic_model(net, combined, mcfg, fixed_bids=fixed,
                                  reserve_slack_penalty=cfg.slack_penalty)


def run_stage1(network: PortfolioNetwork, spec: MarketSpec,
               forecasts: Mapping[str, ScenarioSet], state: DayState,
               cfg: StageConfig, day: date | None = None) -> StageResult:
    """Full stochastic solve before the reserve auction closes."""
    stoch = prepare_stage1(network, spec, forecasts, state, cfg, day)
    sol, shortfalls = _solve(stoch, cfg, 1)
    return _result(1, stoch, sol, shortfalls)


def run_stage2(network: PortfolioNetwork, spec: MarketSpec,
               stage1: StageResult, cleared_pos: np.ndarray | None,
               cleared_neg: np.ndarray | None,
               forecasts: Mapping[str, ScenarioSet], state: DayState,
               cfg: StageConfig, day: date | None = None) -> StageResult:
    """Reserve bids frozen, reserve acceptance settled, energy refreshed."""
    day = day or network.time.start.date()
    net = _day_network(network, day, cfg, state)
    H = cfg.horizon_hours
    parts = [("dam", forecasts["dam"])]
    if "heat" in forecasts:
        parts.append(("heat", forecasts["heat"]))
    _check_coverage(net, [ss for _, ss in parts], None, H)
    combined = combine_scenarios(parts)
    sc0 = combined.scenarios[0]
    if spec.has_afrr and (cleared_pos is None or cleared_neg is None):
        raise DataGapError("cleared reserve prices are required in stage 2")
    mcfg = _market_config(spec, sc0.trajectories[TRAJ_DAM], cleared_pos,
                          cleared_neg, window=cfg.apply_hours)
    fixed = FixedBids(
        afrr_pos=_window_fixed(stage1.bids["afrr_pos"], H,
                               len(spec.afrr_pos_ladder.levels),
                               cfg.apply_hours) if spec.has_afrr else None,
        afrr_neg=_window_fixed(stage1.bids["afrr_neg"], H,
                               len(spec.afrr_neg_ladder.levels),
                               cfg.apply_hours) if spec.has_afrr else None)
    stoch = build_stochastic_model(net, combined, mcfg, fixed_bids=fixed,
                                   reserve_slack_penalty=cfg.slack_penalty)
    sol, shortfalls = _solve(stoch, cfg, 2)
    return _result(2, stoch, sol, shortfalls, fixed)


def run_stage3(network: PortfolioNetwork, spec: MarketSpec,
               stage2: StageResult, cleared_pos: np.ndarray | None,
               cleared_neg: np.ndarray | None,
               realized: Mapping[str, np.ndarray], state: DayState,
               cfg: StageConfig, day: date | None = None,
               intraday_hook: Callable[[int, DayState], None] | None = None
               ) -> StageResult:
    """Deterministic settlement solve for the delivery day.

    ``intraday_hook``, when given, is called once per delivery hour with the
    simulated storage state; re-solving within the day is deliberately not
    wired up by default.
    """
    day = day or network.time.start.date()
    net = _day_network(network, day, cfg, state)
    H = cfg.horizon_hours
    if TRAJ_DAM not in realized:
        raise DataGapError("realized day-ahead prices are required in stage 3")
    _check_coverage(net, [], realized, H)
    traj = {TRAJ_DAM: np.asarray(realized[TRAJ_DAM], dtype=float)[:H]}
    for ld in net.loads:
        key = load_trajectory_key(ld.name)
        traj[key] = np.asarray(realized[key], dtype=float)[:H]
    single = ScenarioSet([Scenario(day.isoformat(), 1.0, traj)])
    mcfg = _market_config(spec, traj[TRAJ_DAM], cleared_pos, cleared_neg,
                          window=cfg.apply_hours)
    W = min(cfg.apply_hours, H)
    fixed = FixedBids(
        dam=stage2.bids["dam"][:W].copy(),
        afrr_pos=_window_fixed(stage2.bids["afrr_pos"], H,
                               len(spec.afrr_pos_ladder.levels),
                               cfg.apply_hours) if spec.has_afrr else None,
        afrr_neg=_window_fixed(stage2.bids["afrr_neg"], H,
                               len(spec.afrr_neg_ladder.levels),
                               cfg.apply_hours) if spec.has_afrr else None)
    stoch = build_stochastic_model(net, single, mcfg, fixed_bids=fixed,
                                   reserve_slack_penalty=cfg.slack_penalty,
                                   balance_slack_penalty=cfg.slack_penalty)
    sol, shortfalls = _solve(stoch, cfg, 3)
    result = _result(3, stoch, sol, shortfalls, fixed)
    if intraday_hook is not None:
        sched = result.schedules[day.isoformat()]
        for h in range(cfg.apply_hours):
            snap = DayState(
                storage_levels={s.name: float(sched[f"{s.name}:level"][h])
                                for s in net.storage_units},
                commitment={g.name: sched[f"{g.name}:commit"][h] > 0.5
                            for g in net.generators})
            intraday_hook(h, snap)
    return result


# ---------------------------------------------------------------------------
# rolling driver


@dataclass
class LedgerRow:
    day: date
    dam_cash: float
    afrr_pos_cash: float
    afrr_neg_cash: float
    generation_cost: float
    objective: float

    @property
    def market_total(self) -> float:
        return self.dam_cash + self.afrr_pos_cash + self.afrr_neg_cash


@dataclass
class DayRecord:
    day: date
    stage1: StageResult
    stage2: StageResult
    stage3: StageResult
    state_in: DayState
    state_out: DayState
    ledger: LedgerRow


@dataclass
class RollingResult:
    days: list[DayRecord]
    final_state: DayState

    def ledger_total(self) -> float:
        return sum(r.ledger.market_total for r in self.days)


def _settle(day: date, spec: MarketSpec, cfg: StageConfig,
            stage3: StageResult) -> LedgerRow:
    """Cash flows over the apply window from the settlement solution."""
    b = stage3.stoch.builds[0]
    sol = stage3.solution
    dt = b.network.time.dt
    W = cfg.apply_hours
    dam_cash = 0.0
    for t in range(min(W, b.network.time.steps)):
        net = sol.values[b.vmap.get("dam", "net", t)]
        dam_cash += b.dam_prices[t] * net * dt
    pos_cash = neg_cash = 0.0
    if b.afrr_pos_ladder is not None:
        for t in range(min(W, b.network.time.steps)):
            for k, level in enumerate(b.afrr_pos_ladder):
                pos_cash += (b.afrr_beta_pos[t, k] * level * dt *
                             sol.values[b.vmap.get("afrr_pos", f"bid{k}", t)])
            for k, level in enumerate(b.afrr_neg_ladder):
                neg_cash += (b.afrr_beta_neg[t, k] * level * dt *
                             sol.values[b.vmap.get("afrr_neg", f"bid{k}", t)])
    cost = b.cost_terms.evaluate(sol.values)
    return LedgerRow(day, dam_cash, pos_cash, neg_cash, cost,
                     stage3.objective)


def _carry_state(stage3: StageResult, net: PortfolioNetwork,
                 cfg: StageConfig, spec: MarketSpec) -> DayState:
    label = next(iter(stage3.schedules))
    sched = stage3.schedules[label]
    boundary = cfg.apply_hours - 1
    levels = {}
    for s in net.storage_units:
        levels[s.name] = float(sched[f"{s.name}:level"][boundary])
    commitment = {}
    for g in net.generators:
        key = f"{g.name}:commit"
        commitment[g.name] = bool(sched[key][boundary] > 0.5) if key in sched \
            else True
    b = stage3.stoch.builds[0]
    W = cfg.apply_hours
    dam_pos = np.array([stage3.solution.values[b.vmap.get("dam", "net", t)]
                        for t in range(W)])
    res_pos = res_neg = None
    if spec.has_afrr:
        beta_p, beta_n = b.afrr_beta_pos, b.afrr_beta_neg
        res_pos = np.array([
            sum(beta_p[t, k] * stage3.bids["afrr_pos"][t, k]
                for k in range(beta_p.shape[1])) for t in range(W)])
        res_neg = np.array([
            sum(beta_n[t, k] * stage3.bids["afrr_neg"][t, k]
                for k in range(beta_n.shape[1])) for t in range(W)])
    return DayState(levels, commitment, dam_pos, res_pos, res_neg)


def run_day(network: PortfolioNetwork, spec: MarketSpec,
            provider: ForecastProvider, day: date, state: DayState,
            cfg: StageConfig) -> DayRecord:
    s1 = run_stage1(network, spec, provider.stage1(day), state, cfg, day)
    cleared_pos = cleared_neg = None
    if spec.has_afrr:
        cleared_pos, cleared_neg = provider.cleared_afrr(day)
    s2 = run_stage2(network, spec, s1, cleared_pos, cleared_neg,
                    provider.stage2(day), state, cfg, day)
    s3 = run_stage3(network, spec, s2, cleared_pos, cleared_neg,
                    provider.realized(day), state, cfg, day)
    net = _day_network(network, day, cfg, state)
    state_out = _carry_state(s3, net, cfg, spec)
    ledger = _settle(day, spec, cfg, s3)
    return DayRecord(day, s1, s2, s3, state, state_out, ledger)


def run_rolling(network: PortfolioNetwork, spec: MarketSpec,
                provider: ForecastProvider, days: list[date],
                cfg: StageConfig, state: DayState | None = None
                ) -> RollingResult:
    if not days:
        raise ValueError("no days to run")
    state = state if state is not None else initial_state(network)
    records: list[DayRecord] = []
    for day in days:
        rec = run_day(network, spec, provider, day, state, cfg)
        records.append(rec)
        state = rec.state_out
    return RollingResult(records, state)

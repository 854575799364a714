"""Portfolio network description and translation into the base dispatch MILP.

A portfolio is a small multi-carrier network: buses (electricity, heat,
fuel), committable generators, storage units, conversion links, fixed loads
and at most one grid connection.  ``build_base_model`` turns it into the
physical part of the optimization problem; market mechanics are layered on
top by :mod:`ucbid.markets`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from typing import Mapping

import numpy as np

from .milp import (LinearExpression, Model, ModelError, Sense, VariableDef,
                   VariableRef, VarKind)

CARRIERS = ("electricity", "heat", "fuel")


@dataclass(frozen=True)
class Bus:
    name: str
    carrier: str


@dataclass(frozen=True)
class CommittableGenerator:
    """Dispatchable unit with on/off decision, bounds p_min..p_max when on.

    ``must_run`` pins the unit on for the whole horizon: the commitment
    variable degenerates to the constant 1 and no start-up dynamics apply.
    Baseload plants that never cycle should use it; it keeps scenario
    models free of pointless binaries.
    """

    name: str
    bus: str
    p_max: float
    p_min: float = 0.0
    marginal_cost: float = 0.0
    min_up_time: int = 0
    min_down_time: int = 0
    start_up_cost: float = 0.0
    initially_committed: bool = False
    must_run: bool = False


@dataclass(frozen=True)
class StorageUnit:
    name: str
    bus: str
    p_max: float
    e_max: float
    eff_in: float = 1.0
    eff_out: float = 1.0
    e_initial: float = 0.0
    cyclic: bool = False


@dataclass(frozen=True)
class Link:
    """One-directional conversion; flow is measured at the input side."""

    name: str
    from_bus: str
    to_bus: str
    efficiency: float
    p_max: float


@dataclass(frozen=True, eq=False)
class FixedLoad:
    name: str
    bus: str
    demand: np.ndarray


@dataclass(frozen=True)
class GridConnection:
    bus: str
    capacity: float


@dataclass
class TimeIndex:
    start: datetime
    steps: int
    resolution_hours: float = 1.0

    @property
    def dt(self) -> float:
        return self.resolution_hours

    def timestamps(self) -> list[datetime]:
        step = timedelta(hours=self.resolution_hours)
        return [self.start + i * step for i in range(self.steps)]


@dataclass
class PortfolioNetwork:
    name: str
    time: TimeIndex
    buses: list[Bus] = field(default_factory=list)
    generators: list[CommittableGenerator] = field(default_factory=list)
    storage_units: list[StorageUnit] = field(default_factory=list)
    links: list[Link] = field(default_factory=list)
    loads: list[FixedLoad] = field(default_factory=list)
    grid: GridConnection | None = None

    def bus_names(self) -> set[str]:
        return {b.name for b in self.buses}

    def with_storage_levels(self, levels: Mapping[str, float]) -> "PortfolioNetwork":
        """Copy with storage e_initial replaced (stage boundary carry-over)."""
        units = [replace(s, e_initial=float(levels.get(s.name, s.e_initial)))
                 for s in self.storage_units]
        return replace(self, storage_units=units)

    def with_commitment(self, states: Mapping[str, bool]) -> "PortfolioNetwork":
        gens = [replace(g, initially_committed=bool(states.get(g.name, g.initially_committed)))
                for g in self.generators]
        return replace(self, generators=gens)


def validate(network: PortfolioNetwork) -> list[str]:
    """Collect human-readable diagnostics; empty list means buildable."""
    diag: list[str] = []
    buses = network.bus_names()
    if len(buses) != len(network.buses):
        diag.append("duplicate bus names")
    for b in network.buses:
        if b.carrier not in CARRIERS:
            diag.append(f"bus {b.name}: unknown carrier {b.carrier!r}")
    names: list[str] = []
    referenced: set[str] = set()
    if network.time.steps < 1:
        diag.append("time index must have at least one step")
    if network.time.resolution_hours <= 0:
        diag.append("time resolution must be positive")
    for g in network.generators:
        names.append(g.name)
        referenced.add(g.bus)
        if g.bus not in buses:
            diag.append(f"generator {g.name}: unknown bus {g.bus!r}")
        if g.p_max <= 0 or g.p_min < 0 or g.p_min > g.p_max:
            diag.append(f"generator {g.name}: bad power range "
                        f"[{g.p_min}, {g.p_max}]")
        if g.min_up_time < 0 or g.min_down_time < 0:
            diag.append(f"generator {g.name}: negative up/down time")
        if g.start_up_cost < 0:
            diag.append(f"generator {g.name}: negative start-up cost")
        if g.must_run:
            if not g.initially_committed:
                diag.append(f"generator {g.name}: must_run unit must start "
                            f"committed")
            if g.start_up_cost > 0 or g.min_up_time > 1 or g.min_down_time > 1:
                diag.append(f"generator {g.name}: must_run excludes start-up "
                            f"dynamics")
    for s in network.storage_units:
        names.append(s.name)
        referenced.add(s.bus)
        if s.bus not in buses:
            diag.append(f"storage {s.name}: unknown bus {s.bus!r}")
        if not (0 < s.eff_in <= 1) or not (0 < s.eff_out <= 1):
            diag.append(f"storage {s.name}: efficiencies must be in (0, 1]")
        if s.p_max <= 0 or s.e_max <= 0:
            diag.append(f"storage {s.name}: p_max and e_max must be positive")
        if not (0 <= s.e_initial <= s.e_max):
            diag.append(f"storage {s.name}: e_initial outside [0, e_max]")
    for ln in network.links:
        names.append(ln.name)
        referenced.update((ln.from_bus, ln.to_bus))
        if ln.from_bus not in buses or ln.to_bus not in buses:
            diag.append(f"link {ln.name}: unknown endpoint bus")
        if ln.from_bus == ln.to_bus:
            diag.append(f"link {ln.name}: loops back to {ln.from_bus!r}")
        if not (0 < ln.efficiency <= 1):
            diag.append(f"link {ln.name}: efficiency must be in (0, 1]")
        if ln.p_max <= 0:
            diag.append(f"link {ln.name}: p_max must be positive")
    for ld in network.loads:
        names.append(ld.name)
        referenced.add(ld.bus)
        if ld.bus not in buses:
            diag.append(f"load {ld.name}: unknown bus {ld.bus!r}")
        if len(ld.demand) != network.time.steps:
            diag.append(f"load {ld.name}: demand length {len(ld.demand)} "
                        f"!= steps {network.time.steps}")
        elif np.any(np.asarray(ld.demand) < 0):
            diag.append(f"load {ld.name}: negative demand")
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        diag.append(f"duplicate component names: {dupes}")
    if network.grid is not None:
        referenced.add(network.grid.bus)
        grid_bus = next((b for b in network.buses
                         if b.name == network.grid.bus), None)
        if grid_bus is None:
            diag.append(f"grid connection: unknown bus {network.grid.bus!r}")
        elif grid_bus.carrier != "electricity":
            diag.append("grid connection must attach to an electricity bus")
        if network.grid.capacity <= 0:
            diag.append("grid capacity must be positive")
    for b in network.buses:
        if b.name not in referenced:
            diag.append(f"bus {b.name}: no component attached")
    return diag


class VariableMap:
    """(component, role, step) -> VariableRef bookkeeping for one build."""

    def __init__(self) -> None:
        self._entries: dict[tuple[str, str, int], VariableRef] = {}

    def add(self, comp: str, role: str, t: int, ref: VariableRef) -> None:
        key = (comp, role, t)
        if key in self._entries:
            raise ModelError(f"duplicate variable map entry {key}")
        self._entries[key] = ref

    def get(self, comp: str, role: str, t: int) -> VariableRef:
        try:
            return self._entries[(comp, role, t)]
        except KeyError:
            raise KeyError(f"no variable for {(comp, role, t)}") from None

    def has(self, comp: str, role: str, t: int) -> bool:
        return (comp, role, t) in self._entries

    def series(self, comp: str, role: str, steps: int) -> list[VariableRef]:
        return [self.get(comp, role, t) for t in range(steps)]

    def keys(self):
        return self._entries.keys()


@dataclass
class PortfolioBuild:
    """One portfolio instance inside a (possibly shared) model."""

    model: Model
    vmap: VariableMap
    network: PortfolioNetwork
    prefix: str = ""
    weight: float = 1.0
    scenario_label: str = ""
    balance_rows: dict[tuple[str, int], int] = field(default_factory=dict)
    cost_terms: LinearExpression = field(default_factory=LinearExpression)
    market_terms: LinearExpression = field(default_factory=LinearExpression)
    # filled in by ucbid.markets when bidding is attached
    dam_ladder: list[float] | None = None
    dam_gamma: np.ndarray | None = None
    dam_prices: np.ndarray | None = None
    dam_window: int | None = None
    afrr_pos_ladder: list[float] | None = None
    afrr_neg_ladder: list[float] | None = None
    afrr_beta_pos: np.ndarray | None = None
    afrr_beta_neg: np.ndarray | None = None
    afrr_pos_prices: np.ndarray | None = None
    afrr_neg_prices: np.ndarray | None = None
    afrr_participants: list = field(default_factory=list)
    reserve_rows_pos: dict[int, int] = field(default_factory=dict)
    reserve_rows_neg: dict[int, int] = field(default_factory=dict)

    def total_objective(self) -> LinearExpression:
        return self.cost_terms.copy().add(self.market_terms)


def build_base_model(network: PortfolioNetwork, *, model: Model | None = None,
                     prefix: str = "", weight: float = 1.0,
                     demand_overrides: Mapping[str, np.ndarray] | None = None,
                     ) -> PortfolioBuild:
    """Emit dispatch variables, balances, storage dynamics and commitment.

    ``demand_overrides`` replaces a fixed load's series (used for scenario
    replication); ``prefix``/``weight`` place several replicas in one model.
    """
    problems = validate(network)
    if problems:
        raise ModelError("portfolio not buildable: " + "; ".join(problems))
    overrides = dict(demand_overrides or {})
    for name in overrides:
        if name not in {ld.name for ld in network.loads}:
            raise ModelError(f"demand override for unknown load {name!r}")
    mdl = model if model is not None else Model(network.name)
    vmap = VariableMap()
    build = PortfolioBuild(mdl, vmap, network, prefix, weight)
    T = network.time.steps
    dt = network.time.dt

    balance: dict[tuple[str, int], LinearExpression] = {
        (b.name, t): LinearExpression() for b in network.buses
        for t in range(T)}
    balance_rhs: dict[tuple[str, int], float] = {k: 0.0 for k in balance}

    for g in network.generators:
        for t in range(T):
            p = mdl.add_variable(VariableDef(lower=0.0, upper=g.p_max),
                                 f"{prefix}{g.name}_p_{t}")
            if g.must_run:
                # pinned-on unit: the commitment column is the constant 1 so
                # downstream rows (reserve headroom) read it uniformly
                on = mdl.add_variable(VariableDef(lower=1.0, upper=1.0),
                                      f"{prefix}{g.name}_commit_{t}")
            else:
                on = mdl.add_variable(VariableDef(VarKind.BINARY),
                                      f"{prefix}{g.name}_commit_{t}")
            vmap.add(g.name, "p", t, p)
            vmap.add(g.name, "commit", t, on)
            balance[(g.bus, t)].add_term(p, 1.0)
            mdl.add_constraint(LinearExpression({p: 1.0, on: -g.p_max}),
                               Sense.LE, 0.0, f"{prefix}cap_{g.name}_{t}")
            if g.p_min > 0:
                mdl.add_constraint(LinearExpression({on: g.p_min, p: -1.0}),
                                   Sense.LE, 0.0, f"{prefix}floor_{g.name}_{t}")
            build.cost_terms.add_term(p, g.marginal_cost * dt)
        if not g.must_run and (g.start_up_cost > 0 or g.min_up_time > 1
                               or g.min_down_time > 1):
            init = 1.0 if g.initially_committed else 0.0
            for t in range(T):
                prev = {vmap.get(g.name, "commit", t - 1): -1.0} if t else {}
                prev_const = 0.0 if t else init
                if g.start_up_cost > 0:
                    su = mdl.add_variable(VariableDef(lower=0.0, upper=1.0),
                                          f"{prefix}{g.name}_start_{t}")
                    vmap.add(g.name, "start", t, su)
                    expr = LinearExpression(
                        {vmap.get(g.name, "commit", t): 1.0, su: -1.0})
                    expr.add(LinearExpression(prev))
                    mdl.add_constraint(expr, Sense.LE, prev_const,
                                       f"{prefix}start_{g.name}_{t}")
                    build.cost_terms.add_term(su, g.start_up_cost)
                on_t = vmap.get(g.name, "commit", t)
                for tau in range(t + 1, min(t + g.min_up_time, T)):
                    expr = LinearExpression({on_t: 1.0,
                                             vmap.get(g.name, "commit", tau): -1.0})
                    expr.add(LinearExpression(prev))
                    mdl.add_constraint(expr, Sense.LE, prev_const,
                                       f"{prefix}minup_{g.name}_{t}_{tau}")
                for tau in range(t + 1, min(t + g.min_down_time, T)):
                    # switching off at t keeps the unit off through tau
                    expr = LinearExpression({on_t: -1.0,
                                             vmap.get(g.name, "commit", tau): 1.0})
                    expr.add(LinearExpression(prev), -1.0)
                    mdl.add_constraint(expr, Sense.LE, 1.0 - prev_const,
                                       f"{prefix}mindown_{g.name}_{t}_{tau}")

    for s in network.storage_units:
        for t in range(T):
            pin = mdl.add_variable(VariableDef(lower=0.0, upper=s.p_max),
                                   f"{prefix}{s.name}_in_{t}")
            pout = mdl.add_variable(VariableDef(lower=0.0, upper=s.p_max),
                                    f"{prefix}{s.name}_out_{t}")
            e = mdl.add_variable(VariableDef(lower=0.0, upper=s.e_max),
                                 f"{prefix}{s.name}_e_{t}")
            vmap.add(s.name, "p_in", t, pin)
            vmap.add(s.name, "p_out", t, pout)
            vmap.add(s.name, "e", t, e)
            balance[(s.bus, t)].add_term(pout, 1.0).add_term(pin, -1.0)
            expr = LinearExpression({e: 1.0, pin: -s.eff_in * dt,
                                     pout: dt / s.eff_out})
            if t == 0:
                mdl.add_constraint(expr, Sense.EQ, s.e_initial,
                                   f"{prefix}soc_{s.name}_{t}")
            else:
                expr.add_term(vmap.get(s.name, "e", t - 1), -1.0)
                mdl.add_constraint(expr, Sense.EQ, 0.0,
                                   f"{prefix}soc_{s.name}_{t}")
        if s.cyclic:
            mdl.add_constraint(
                LinearExpression({vmap.get(s.name, "e", T - 1): 1.0}),
                Sense.EQ, s.e_initial, f"{prefix}cyc_{s.name}")

    for ln in network.links:
        for t in range(T):
            f = mdl.add_variable(VariableDef(lower=0.0, upper=ln.p_max),
                                 f"{prefix}{ln.name}_flow_{t}")
            vmap.add(ln.name, "flow", t, f)
            balance[(ln.from_bus, t)].add_term(f, -1.0)
            balance[(ln.to_bus, t)].add_term(f, ln.efficiency)

    for ld in network.loads:
        series = np.asarray(overrides.get(ld.name, ld.demand), dtype=float)
        if len(series) != T:
            raise ModelError(f"override for load {ld.name}: length "
                             f"{len(series)} != steps {T}")
        for t in range(T):
            balance_rhs[(ld.bus, t)] += float(series[t])

    for (bus, t), expr in balance.items():
        idx = mdl.add_constraint(expr, Sense.EQ, balance_rhs[(bus, t)],
                                 f"{prefix}bal_{bus}_{t}")
        build.balance_rows[(bus, t)] = idx

    mdl.add_objective(build.cost_terms, weight)
    return build

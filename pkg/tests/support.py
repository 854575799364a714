"""Shared builders for the test suite.

Three families live here: random solver instances with an independent
exhaustive-enumeration oracle, small electric portfolios with market
attachments, and scenario fixtures.  Everything is seeded through the
caller's Generator so failures replay exactly.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from datetime import datetime

import numpy as np
from scipy.optimize import linprog

from ucbid.markets import AfrrParticipant, BidLadder
from ucbid.milp import (LinearExpression, Model, Sense, VariableDef,
                        VariableRef, VarKind)
from ucbid.portfolio import (Bus, CommittableGenerator, FixedLoad,
                             GridConnection, PortfolioNetwork, StorageUnit,
                             TimeIndex, build_base_model)
from ucbid.stochastic import (TRAJ_AFRR_NEG, TRAJ_AFRR_POS, TRAJ_DAM,
                              AfrrConfig, DamConfig, MarketConfig, Scenario,
                              ScenarioSet)

START = datetime(2025, 3, 1)

_SENSES = {"<=": Sense.LE, ">=": Sense.GE, "==": Sense.EQ}


@dataclass
class RandomMilp:
    """A random mixed-binary model plus the raw arrays the oracle needs."""
    model: Model
    n_bin: int
    n_cont: int
    c_bin: np.ndarray
    c_cont: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    # rows as (binary part, continuous part, sense string, rhs)
    rows: list[tuple[np.ndarray, np.ndarray, str, float]]


def random_milp_instance(rng: np.random.Generator,
                         pure_binary: bool = False) -> RandomMilp:
    """Draw a bounded random instance.

    Coefficients are rounded so row activities land on a coarse lattice,
    keeping feasibility decisions away from either solver's tolerance.
    Most instances are anchored on a random feasible point; the rest may
    come out infeasible, which is part of what gets compared.
    """
    if pure_binary:
        n_bin = int(rng.integers(2, 13))
        n_cont = 0
    else:
        n_bin = int(rng.integers(1, 10))
        n_cont = int(rng.integers(1, 11))
    c_bin = np.round(rng.normal(0.0, 3.0, n_bin), 4)
    c_cont = np.round(rng.normal(0.0, 3.0, n_cont), 4)
    lower = np.round(rng.uniform(-4.0, 0.0, n_cont), 4)
    upper = np.round(lower + rng.uniform(0.5, 6.0, n_cont), 4)

    anchored = bool(rng.uniform() < 0.85)
    xb0 = rng.integers(0, 2, n_bin).astype(float)
    xc0 = lower + (upper - lower) * rng.uniform(0.2, 0.8, n_cont)

    rows: list[tuple[np.ndarray, np.ndarray, str, float]] = []
    for _ in range(int(rng.integers(2, 7))):
        a = np.zeros(n_bin + n_cont)
        while not a.any():
            mask = rng.uniform(size=n_bin + n_cont) < 0.6
            a = np.round(rng.normal(0.0, 2.0, n_bin + n_cont) * mask, 4)
        ab, ac = a[:n_bin], a[n_bin:]
        u = rng.uniform()
        sense = "<=" if u < 0.45 else (">=" if u < 0.9 else "==")
        if anchored:
            lhs0 = float(ab @ xb0) + (float(ac @ xc0) if n_cont else 0.0)
            margin = float(rng.uniform(0.0, 3.0))
            if sense == "<=":
                rhs = lhs0 + margin
            elif sense == ">=":
                rhs = lhs0 - margin
            else:
                rhs = lhs0
        else:
            rhs = float(rng.normal(0.0, 2.0))
        rows.append((ab, ac, sense, round(rhs, 6)))

    model = Model("random-instance")
    refs: list[VariableRef] = []
    for i in range(n_bin):
        refs.append(model.add_variable(VariableDef(VarKind.BINARY), f"b{i}"))
    for i in range(n_cont):
        refs.append(model.add_variable(
            VariableDef(lower=float(lower[i]), upper=float(upper[i])), f"x{i}"))
    obj = LinearExpression()
    for ref, coef in zip(refs, np.concatenate([c_bin, c_cont])):
        obj.add_term(ref, float(coef))
    model.add_objective(obj)
    for ab, ac, sense, rhs in rows:
        expr = LinearExpression()
        for ref, coef in zip(refs, np.concatenate([ab, ac])):
            expr.add_term(ref, float(coef))
        model.add_constraint(expr, _SENSES[sense], rhs)
    return RandomMilp(model, n_bin, n_cont, c_bin, c_cont, lower, upper, rows)


def enumerate_optimum(inst: RandomMilp) -> float | None:
    """Exhaustive oracle: every binary assignment, LP on what remains.

    Binary-only rows are screened vectorized over all assignments;
    assignments that survive get their continuous part solved by scipy.
    Returns the best objective, or None when nothing is feasible.
    """
    assigns = np.array(list(itertools.product((0.0, 1.0), repeat=inst.n_bin)))
    ab_mat = np.array([r[0] for r in inst.rows])
    ac_mat = np.array([r[1] for r in inst.rows]) if inst.n_cont else None
    rhs = np.array([r[3] for r in inst.rows])
    lhs_bin = assigns @ ab_mat.T

    feas = np.ones(len(assigns), dtype=bool)
    lp_rows = []
    for j, (_, ac, sense, _) in enumerate(inst.rows):
        if inst.n_cont and ac.any():
            lp_rows.append(j)
            continue
        v = lhs_bin[:, j]
        if sense == "<=":
            feas &= v <= rhs[j] + 1e-9
        elif sense == ">=":
            feas &= v >= rhs[j] - 1e-9
        else:
            feas &= np.abs(v - rhs[j]) <= 1e-9
    if not feas.any():
        return None

    if inst.n_cont == 0:
        return float((assigns[feas] @ inst.c_bin).min())

    ub_rows = [j for j in lp_rows if inst.rows[j][2] == "<="]
    ge_rows = [j for j in lp_rows if inst.rows[j][2] == ">="]
    eq_rows = [j for j in lp_rows if inst.rows[j][2] == "=="]
    A_parts = []
    if ub_rows:
        A_parts.append(ac_mat[ub_rows])
    if ge_rows:
        A_parts.append(-ac_mat[ge_rows])
    A_ub = np.vstack(A_parts) if A_parts else None
    A_eq = ac_mat[eq_rows] if eq_rows else None
    bounds = list(zip(inst.lower, inst.upper))

    best: float | None = None
    for k in np.flatnonzero(feas):
        b_parts = []
        if ub_rows:
            b_parts.append(rhs[ub_rows] - lhs_bin[k, ub_rows])
        if ge_rows:
            b_parts.append(-(rhs[ge_rows] - lhs_bin[k, ge_rows]))
        b_ub = np.concatenate(b_parts) if b_parts else None
        b_eq = rhs[eq_rows] - lhs_bin[k, eq_rows] if eq_rows else None
        res = linprog(inst.c_cont, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq,
                      b_eq=b_eq, bounds=bounds, method="highs")
        if res.status == 0:
            cand = float(inst.c_bin @ assigns[k]) + float(res.fun)
            if best is None or cand < best:
                best = cand
    return best


def small_network(T: int, demand: np.ndarray | float = 4.0,
                  gen_mc: float = 30.0, p_min: float = 4.0,
                  must_run: bool = False, grid_cap: float = 25.0,
                  bess: bool = True) -> PortfolioNetwork:
    """One electric bus, one generator, optionally a battery."""
    if np.isscalar(demand):
        demand = np.full(T, float(demand))
    units = []
    if bess:
        units.append(StorageUnit("bess", "el", p_max=6.0, e_max=6.0,
                                 eff_in=0.95, eff_out=0.95, e_initial=3.0))
    gen = CommittableGenerator("gen", "el", p_max=15.0, p_min=p_min,
                               marginal_cost=gen_mc, must_run=must_run,
                               initially_committed=must_run)
    return PortfolioNetwork(
        "small", TimeIndex(START, T),
        buses=[Bus("el", "electricity")],
        generators=[gen],
        storage_units=units,
        loads=[FixedLoad("load", "el", np.asarray(demand, dtype=float))],
        grid=GridConnection("el", grid_cap))


def random_portfolio(rng: np.random.Generator, T: int = 6
                     ) -> PortfolioNetwork:
    """Random feasible single-bus portfolio.

    Feasibility by construction: the always-accepted floor bid keeps both
    import and export open, demand stays inside the grid rating, and
    must-run minimums stay below export headroom.
    """
    gens = []
    for i in range(int(rng.integers(1, 3))):
        p_max = float(np.round(rng.uniform(6.0, 16.0), 3))
        p_min = float(np.round(rng.uniform(0.0, 4.0), 3))
        must = bool(rng.uniform() < 0.3)
        gens.append(CommittableGenerator(
            f"g{i}", "el", p_max=p_max, p_min=p_min,
            marginal_cost=float(np.round(rng.uniform(-30.0, 45.0), 3)),
            must_run=must, initially_committed=must))
    units = []
    if rng.uniform() < 0.8:
        e_max = float(np.round(rng.uniform(4.0, 10.0), 3))
        units.append(StorageUnit(
            "bess", "el", p_max=float(np.round(rng.uniform(2.0, 6.0), 3)),
            e_max=e_max,
            eff_in=float(np.round(rng.uniform(0.85, 0.98), 3)),
            eff_out=float(np.round(rng.uniform(0.85, 0.98), 3)),
            e_initial=float(np.round(rng.uniform(0.0, e_max), 3)),
            cyclic=bool(rng.uniform() < 0.5)))
    demand = np.round(rng.uniform(1.0, 6.0, T), 3)
    return PortfolioNetwork(
        "random", TimeIndex(START, T),
        buses=[Bus("el", "electricity")],
        generators=gens,
        storage_units=units,
        loads=[FixedLoad("load", "el", demand)],
        grid=GridConnection("el", float(np.round(rng.uniform(15.0, 30.0), 3))))


def market_config(net: PortfolioNetwork, T: int, rng: np.random.Generator,
                  with_afrr: bool = True, side: str = "both",
                  window: int | None = None) -> MarketConfig:
    """DAM ladder with the exchange floor plus mid levels; optional reserve
    ladders with every unit participating."""
    dam = DamConfig(
        BidLadder((-500.0, -20.0, 10.0, 40.0)),
        np.round(rng.uniform(5.0, 85.0, T), 3),
        side=side, window=window)
    afrr = None
    if with_afrr:
        parts = [AfrrParticipant(g.name, "generator") for g in net.generators]
        parts += [AfrrParticipant(s.name, "storage")
                  for s in net.storage_units]
        afrr = AfrrConfig(
            BidLadder((4.0, 9.0, 16.0)), BidLadder((3.0, 8.0, 14.0)),
            np.round(rng.uniform(2.0, 20.0, T), 3),
            np.round(rng.uniform(2.0, 18.0, T), 3),
            parts)
    return MarketConfig(dam=dam, afrr=afrr)


def price_scenarios(rng: np.random.Generator, T: int, n: int,
                    base: float = 45.0, spread: float = 25.0,
                    with_afrr: bool = True) -> ScenarioSet:
    """n scenarios with equal weight and independent price draws."""
    scens = []
    for s in range(n):
        traj = {TRAJ_DAM: np.round(base + spread * rng.standard_normal(T), 3)}
        if with_afrr:
            traj[TRAJ_AFRR_POS] = np.round(rng.uniform(2.0, 20.0, T), 3)
            traj[TRAJ_AFRR_NEG] = np.round(rng.uniform(2.0, 18.0, T), 3)
        scens.append(Scenario(f"s{s}", 1.0 / n, traj))
    return ScenarioSet(scens)

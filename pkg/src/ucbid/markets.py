"""Market mechanics: day-ahead ladder bidding and aFRR capacity products.

Day-ahead exchange is pay-as-clear with a discretized price ladder: a bid at
ladder level j clears at step t iff the level does not exceed the clearing
price (ties accepted).  The net exchange is forced to one sign per step via a
big-M binary with M equal to the grid capacity.  aFRR is pay-as-bid: accepted
capacity bids must be backed by reserve headroom on generators (and their
conversion path) or on batteries, including a one-hour energy lookahead.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .milp import (FEAS_TOL, LinearExpression, ModelError, Sense,
                   VariableDef, VarKind)
from .portfolio import PortfolioBuild

DAM_FLOOR = -500.0

ROLE_DAM_BID = "dam_bid"
ROLE_AFRR_POS_BID = "afrr_pos_bid"
ROLE_AFRR_NEG_BID = "afrr_neg_bid"


@dataclass(frozen=True)
class BidLadder:
    levels: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.levels:
            raise ModelError("bid ladder needs at least one level")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ModelError("bid ladder levels must be strictly increasing")

    def __len__(self) -> int:
        return len(self.levels)


@dataclass
class DamMarket:
    ladder: BidLadder
    clearing_prices: np.ndarray
    floor: float = DAM_FLOOR

    def __post_init__(self) -> None:
        self.clearing_prices = np.asarray(self.clearing_prices, dtype=float)
        if self.ladder.levels[0] != self.floor:
            raise ModelError(f"first ladder level must be the price floor "
                             f"{self.floor}")


@dataclass
class AfrrMarket:
    pos_ladder: BidLadder
    neg_ladder: BidLadder
    pos_clearing: np.ndarray
    neg_clearing: np.ndarray
    block_hours: int = 1

    def __post_init__(self) -> None:
        self.pos_clearing = np.asarray(self.pos_clearing, dtype=float)
        self.neg_clearing = np.asarray(self.neg_clearing, dtype=float)
        if self.block_hours < 1:
            raise ModelError("block_hours must be >= 1")


@dataclass(frozen=True)
class AfrrParticipant:
    """Reserve-providing asset; conversion scales its headroom into market MW.

    Generators whose product reaches the electricity bus through a conversion
    link declare ``via_link``; their reserve is held in own-bus units and the
    link efficiency is the natural conversion factor.
    """

    asset: str
    kind: str                  # "generator" | "storage"
    conversion: float = 1.0
    via_link: str | None = None


def compute_acceptance(ladder: BidLadder, clearing: np.ndarray) -> np.ndarray:
    """gamma[t, j] = 1 iff ladder level j clears at step t (ties accepted)."""
    clearing = np.asarray(clearing, dtype=float)
    levels = np.asarray(ladder.levels)
    return (levels[None, :] <= clearing[:, None]).astype(float)


def add_dam_bidding(build: PortfolioBuild, dam: DamMarket,
                    acceptance: np.ndarray | None = None,
                    fix_rejected: bool = True, side: str = "both",
                    window: int | None = None) -> None:
    """Attach ladder bidding for the day-ahead auction.

    ``side="both"`` is the general two-sided form: bid volumes may be
    positive (sell) or negative (buy), with a binary per delivery hour
    forcing every level onto the same side of the market.  ``side="sell"``
    restricts the ladder to offers; the sign binary and its big-M rows
    become redundant and are omitted, which keeps sell-side portfolios
    (e.g. must-run plants) solvable as pure LPs.

    ``window`` limits the ladder mechanism to the first ``window`` steps.
    Later steps belong to auctions that have not closed yet, so the plant
    is a price taker there: the net exchange stays free (bounded by the
    grid) and is valued at the forecast price, with no bid variables.
    Without a price-valued tail exchange a must-run plant would be walled
    off from its only electrical sink in the look-ahead hours.
    """
    net = build.network
    if net.grid is None:
        raise ModelError("day-ahead bidding requires a grid connection")
    if side not in ("both", "sell"):
        raise ModelError(f"unknown bidding side {side!r}")
    T = net.time.steps
    dt = net.time.dt
    W = T if window is None else min(max(int(window), 0), T)
    if len(dam.clearing_prices) != T:
        raise ModelError(f"clearing price series length "
                         f"{len(dam.clearing_prices)} != steps {T}")
    gamma = compute_acceptance(dam.ladder, dam.clearing_prices) \
        if acceptance is None else np.asarray(acceptance, dtype=float)
    mdl, vmap, pre = build.model, build.vmap, build.prefix
    cap = net.grid.capacity
    levels = dam.ladder.levels
    terms = LinearExpression()
    for t in range(T):
        xnet = mdl.add_variable(VariableDef(lower=-cap, upper=cap),
                                f"{pre}dam_net_{t}")
        vmap.add("dam", "net", t, xnet)
        if t >= W:
            row = build.balance_rows[(net.grid.bus, t)]
            mdl.constraints[row].expression.add_term(xnet, -1.0)
            terms.add_term(xnet, -float(dam.clearing_prices[t]) * dt)
            continue
        if side == "both":
            sign = mdl.add_variable(VariableDef(VarKind.BINARY),
                                    f"{pre}dam_sign_{t}")
            vmap.add("dam", "sign", t, sign)
        match = LinearExpression({xnet: 1.0})
        lo = -cap if side == "both" else 0.0
        for j in range(len(levels)):
            rejected = gamma[t, j] == 0.0
            if fix_rejected and rejected:
                bid = mdl.add_variable(VariableDef(lower=0.0, upper=0.0),
                                       f"{pre}dam_bid{j}_{t}")
            else:
                bid = mdl.add_variable(VariableDef(lower=lo, upper=cap),
                                       f"{pre}dam_bid{j}_{t}")
            vmap.add("dam", f"bid{j}", t, bid)
            if gamma[t, j]:
                match.add_term(bid, -gamma[t, j])
            if side == "both":
                # one sign per delivery hour across the whole ladder
                mdl.add_constraint(LinearExpression({bid: 1.0, sign: -cap}),
                                   Sense.LE, 0.0, f"{pre}dam_sell_{t}_{j}")
                mdl.add_constraint(LinearExpression({bid: -1.0, sign: cap}),
                                   Sense.LE, cap, f"{pre}dam_buy_{t}_{j}")
        mdl.add_constraint(match, Sense.EQ, 0.0, f"{pre}dam_match_{t}")
        row = build.balance_rows[(net.grid.bus, t)]
        mdl.constraints[row].expression.add_term(xnet, -1.0)
        terms.add_term(xnet, -float(dam.clearing_prices[t]) * dt)
    build.market_terms.add(terms)
    mdl.add_objective(terms, build.weight)
    build.dam_ladder = list(levels)
    build.dam_gamma = gamma
    build.dam_prices = dam.clearing_prices.copy()
    build.dam_window = W


def add_afrr_generator_reserve(build: PortfolioBuild, gen_name: str) -> None:
    net = build.network
    gen = next((g for g in net.generators if g.name == gen_name), None)
    if gen is None:
        raise ModelError(f"unknown generator {gen_name!r}")
    mdl, vmap, pre = build.model, build.vmap, build.prefix
    for t in range(net.time.steps):
        rp = mdl.add_variable(VariableDef(lower=0.0, upper=gen.p_max),
                              f"{pre}{gen.name}_rpos_{t}")
        rn = mdl.add_variable(VariableDef(lower=0.0, upper=gen.p_max),
                              f"{pre}{gen.name}_rneg_{t}")
        vmap.add(gen.name, "afrr_pos", t, rp)
        vmap.add(gen.name, "afrr_neg", t, rn)
        p = vmap.get(gen.name, "p", t)
        on = vmap.get(gen.name, "commit", t)
        mdl.add_constraint(LinearExpression({p: 1.0, rp: 1.0, on: -gen.p_max}),
                           Sense.LE, 0.0, f"{pre}resup_{gen.name}_{t}")
        mdl.add_constraint(LinearExpression({rn: 1.0, p: -1.0, on: gen.p_min}),
                           Sense.LE, 0.0, f"{pre}resdn_{gen.name}_{t}")


def add_afrr_link_headroom(build: PortfolioBuild, gen_name: str,
                           link_name: str) -> None:
    """Reserve routed through a conversion link must fit the link's range."""
    net = build.network
    link = next((l for l in net.links if l.name == link_name), None)
    if link is None:
        raise ModelError(f"unknown link {link_name!r}")
    mdl, vmap, pre = build.model, build.vmap, build.prefix
    for t in range(net.time.steps):
        f = vmap.get(link.name, "flow", t)
        rp = vmap.get(gen_name, "afrr_pos", t)
        rn = vmap.get(gen_name, "afrr_neg", t)
        mdl.add_constraint(LinearExpression({f: 1.0, rp: 1.0}), Sense.LE,
                           link.p_max, f"{pre}lnkup_{gen_name}_{t}")
        mdl.add_constraint(LinearExpression({rn: 1.0, f: -1.0}), Sense.LE,
                           0.0, f"{pre}lnkdn_{gen_name}_{t}")


def add_afrr_bess_reserve(build: PortfolioBuild, storage_name: str) -> None:
    """Battery reserve: power headroom plus one-hour energy coverage.

    The energy rows follow the hourly product convention (reserve power held
    for one hour measured in MWh); step 0 uses the configured initial level.
    """
    net = build.network
    sto = next((s for s in net.storage_units if s.name == storage_name), None)
    if sto is None:
        raise ModelError(f"unknown storage unit {storage_name!r}")
    mdl, vmap, pre = build.model, build.vmap, build.prefix
    for t in range(net.time.steps):
        rp = mdl.add_variable(VariableDef(lower=0.0, upper=sto.p_max),
                              f"{pre}{sto.name}_rpos_{t}")
        rn = mdl.add_variable(VariableDef(lower=0.0, upper=sto.p_max),
                              f"{pre}{sto.name}_rneg_{t}")
        vmap.add(sto.name, "afrr_pos", t, rp)
        vmap.add(sto.name, "afrr_neg", t, rn)
        pin = vmap.get(sto.name, "p_in", t)
        pout = vmap.get(sto.name, "p_out", t)
        mdl.add_constraint(
            LinearExpression({rp: 1.0, pout: 1.0, pin: -1.0}), Sense.LE,
            sto.p_max, f"{pre}bresup_{sto.name}_{t}")
        mdl.add_constraint(
            LinearExpression({rn: 1.0, pin: 1.0, pout: -1.0}), Sense.LE,
            sto.p_max, f"{pre}bresdn_{sto.name}_{t}")
        eng_up = LinearExpression({rp: 1.0, pin: -1.0, pout: 1.0})
        eng_dn = LinearExpression({rn: 1.0, pin: 1.0, pout: -1.0})
        if t == 0:
            mdl.add_constraint(eng_up, Sense.LE, sto.e_initial,
                               f"{pre}bengup_{sto.name}_{t}")
            mdl.add_constraint(eng_dn, Sense.LE, sto.e_max - sto.e_initial,
                               f"{pre}bengdn_{sto.name}_{t}")
        else:
            e_prev = vmap.get(sto.name, "e", t - 1)
            eng_up.add_term(e_prev, -1.0)
            mdl.add_constraint(eng_up, Sense.LE, 0.0,
                               f"{pre}bengup_{sto.name}_{t}")
            eng_dn.add_term(e_prev, 1.0)
            mdl.add_constraint(eng_dn, Sense.LE, sto.e_max,
                               f"{pre}bengdn_{sto.name}_{t}")


def add_afrr_bidding(build: PortfolioBuild, afrr: AfrrMarket,
                     participants: list[AfrrParticipant],
                     acceptance_pos: np.ndarray | None = None,
                     acceptance_neg: np.ndarray | None = None,
                     fix_rejected: bool = True) -> None:
    net = build.network
    T = net.time.steps
    dt = net.time.dt
    if len(afrr.pos_clearing) != T or len(afrr.neg_clearing) != T:
        raise ModelError("aFRR clearing series length != steps")
    if not participants:
        raise ModelError("aFRR bidding requires at least one participant")
    mdl, vmap, pre = build.model, build.vmap, build.prefix
    for part in participants:
        if not vmap.has(part.asset, "afrr_pos", 0):
            raise ModelError(f"participant {part.asset!r} has no reserve "
                             f"variables; attach reserves before bidding")
        if part.conversion <= 0:
            raise ModelError(f"participant {part.asset!r}: conversion "
                             f"must be positive")
    beta_p = compute_acceptance(afrr.pos_ladder, afrr.pos_clearing) \
        if acceptance_pos is None else np.asarray(acceptance_pos, dtype=float)
    beta_n = compute_acceptance(afrr.neg_ladder, afrr.neg_clearing) \
        if acceptance_neg is None else np.asarray(acceptance_neg, dtype=float)
    cap = 0.0
    for part in participants:
        if part.kind == "generator":
            g = next(g for g in net.generators if g.name == part.asset)
            cap += part.conversion * g.p_max
        else:
            s = next(s for s in net.storage_units if s.name == part.asset)
            cap += part.conversion * s.p_max
    terms = LinearExpression()
    for side, ladder, beta, clearing, rows in (
            ("pos", afrr.pos_ladder, beta_p, afrr.pos_clearing,
             build.reserve_rows_pos),
            ("neg", afrr.neg_ladder, beta_n, afrr.neg_clearing,
             build.reserve_rows_neg)):
        role_reserve = f"afrr_{side}"
        for t in range(T):
            supply = LinearExpression()
            for k, level in enumerate(ladder.levels):
                rejected = beta[t, k] == 0.0
                ub = 0.0 if (fix_rejected and rejected) else cap
                bid = mdl.add_variable(VariableDef(lower=0.0, upper=ub),
                                       f"{pre}afrr_{side}_bid{k}_{t}")
                vmap.add(f"afrr_{side}", f"bid{k}", t, bid)
                if beta[t, k]:
                    supply.add_term(bid, beta[t, k])
                    terms.add_term(bid, -beta[t, k] * level * dt)
            for part in participants:
                r = vmap.get(part.asset, role_reserve, t)
                supply.add_term(r, -part.conversion)
            rows[t] = mdl.add_constraint(supply, Sense.EQ, 0.0,
                                         f"{pre}ressup_{side}_{t}")
        if afrr.block_hours > 1:
            for t0 in range(0, T, afrr.block_hours):
                for t in range(t0 + 1, min(t0 + afrr.block_hours, T)):
                    for k in range(len(ladder.levels)):
                        a = vmap.get(f"afrr_{side}", f"bid{k}", t)
                        b = vmap.get(f"afrr_{side}", f"bid{k}", t0)
                        mdl.add_constraint(LinearExpression({a: 1.0, b: -1.0}),
                                           Sense.EQ, 0.0,
                                           f"{pre}afrrblk_{side}_{t}_{k}")
    build.market_terms.add(terms)
    mdl.add_objective(terms, build.weight)
    build.afrr_pos_ladder = list(afrr.pos_ladder.levels)
    build.afrr_neg_ladder = list(afrr.neg_ladder.levels)
    build.afrr_beta_pos = beta_p
    build.afrr_beta_neg = beta_n
    build.afrr_pos_prices = afrr.pos_clearing.copy()
    build.afrr_neg_prices = afrr.neg_clearing.copy()
    build.afrr_participants = list(participants)


@dataclass(frozen=True)
class ActivationViolation:
    direction: str          # "pos" | "neg"
    asset: str
    bound: str              # which limit the activated dispatch breaks
    t: int
    excess: float           # MW (or MWh for energy windows) past the limit


def simulate_activation(build: PortfolioBuild, values,
                        tol: float = FEAS_TOL) -> list[ActivationViolation]:
    """Replay a full one-hour call on every reserved MW, step by step.

    For each step and each direction, the solved reserve award of every
    participating asset is added to (positive) or withdrawn from (negative)
    its delivery for one full hour, and the asset's own limits are
    re-checked: generator output range under the solved commitment, the
    conversion-link range for units routed through one, and the battery's
    power rating plus the one-hour energy window measured from the previous
    step's level.  Returns every violation larger than ``tol``; an empty
    list means each award is physically backable on its own.
    """
    net = build.network
    vmap = build.vmap
    out: list[ActivationViolation] = []

    def v(asset: str, role: str, t: int) -> float:
        return float(values.get(vmap.get(asset, role, t), 0.0))

    for part in build.afrr_participants or []:
        if part.kind == "generator":
            g = next(g for g in net.generators if g.name == part.asset)
            link = None
            if part.via_link is not None:
                link = next(l for l in net.links if l.name == part.via_link)
            for t in range(net.time.steps):
                p = v(g.name, "p", t)
                on = v(g.name, "commit", t)
                rp = v(g.name, "afrr_pos", t)
                rn = v(g.name, "afrr_neg", t)
                up = p + rp - g.p_max * on
                if up > tol:
                    out.append(ActivationViolation(
                        "pos", g.name, "output cap", t, up))
                dn = g.p_min * on - (p - rn)
                if dn > tol:
                    out.append(ActivationViolation(
                        "neg", g.name, "minimum load", t, dn))
                if link is not None:
                    f = v(link.name, "flow", t)
                    lu = f + rp - link.p_max
                    if lu > tol:
                        out.append(ActivationViolation(
                            "pos", g.name, "link cap", t, lu))
                    ld = rn - f
                    if ld > tol:
                        out.append(ActivationViolation(
                            "neg", g.name, "link floor", t, ld))
        else:
            s = next(s for s in net.storage_units if s.name == part.asset)
            for t in range(net.time.steps):
                pin = v(s.name, "p_in", t)
                pout = v(s.name, "p_out", t)
                rp = v(s.name, "afrr_pos", t)
                rn = v(s.name, "afrr_neg", t)
                e_prev = s.e_initial if t == 0 else v(s.name, "e", t - 1)
                up = (pout - pin) + rp - s.p_max
                if up > tol:
                    out.append(ActivationViolation(
                        "pos", s.name, "discharge rating", t, up))
                dn = (pin - pout) + rn - s.p_max
                if dn > tol:
                    out.append(ActivationViolation(
                        "neg", s.name, "charge rating", t, dn))
                # one-hour product convention, matching the coverage rows
                floor = (pout - pin) + rp - e_prev
                if floor > tol:
                    out.append(ActivationViolation(
                        "pos", s.name, "energy floor", t, floor))
                ceil = e_prev + (pin - pout) + rn - s.e_max
                if ceil > tol:
                    out.append(ActivationViolation(
                        "neg", s.name, "energy cap", t, ceil))
    return out

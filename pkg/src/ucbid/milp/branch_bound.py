"""Best-first branch-and-bound for binary MILPs over the bounded simplex.

Branching picks the most-fractional binary (ties broken by lowest variable
id); nodes are explored lowest-LP-bound-first with a deterministic insertion
counter as tie-break, so repeated solves of the same model are reproducible.
A cheap round-and-check heuristic plus a fix-binaries dive provide incumbents
early.
"""
from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass

import numpy as np

from .model import Model, Sense, Solution, Status
from .simplex import (FEAS_TOL, INT_TOL, CompiledLP, compile_model,
                      solve_compiled_lp)


@dataclass
class MilpOptions:
    rel_gap: float = 1e-6
    time_limit: float | None = None


def _row_feasible(comp: CompiledLP, x: np.ndarray,
                  lo: np.ndarray, hi: np.ndarray) -> bool:
    tol = FEAS_TOL * np.maximum(1.0, np.abs(comp.b))
    if comp.num_rows:
        resid = comp.A @ x - comp.b
        for i, s in enumerate(comp.senses):
            if s is Sense.LE and resid[i] > tol[i]:
                return False
            if s is Sense.GE and resid[i] < -tol[i]:
                return False
            if s is Sense.EQ and abs(resid[i]) > tol[i]:
                return False
    span = np.maximum(1.0, np.where(np.isfinite(hi), np.abs(hi), 1.0))
    if np.any(x < lo - FEAS_TOL * span) or np.any(x > hi + FEAS_TOL * span):
        return False
    return True


def solve_milp(model: Model, options: MilpOptions | None = None) -> Solution:
    opts = options or MilpOptions()
    comp = compile_model(model)
    bin_idx = np.nonzero(comp.binary_mask)[0]
    started = time.monotonic()

    def timed_out() -> bool:
        return opts.time_limit is not None \
            and time.monotonic() - started > opts.time_limit

    root = solve_compiled_lp(comp)
    if root.status == "infeasible":
        return Solution(Status.INFEASIBLE)
    if root.status == "unbounded":
        # unbounded relaxation; reported as-is (desk-scale models are boxed)
        return Solution(Status.UNBOUNDED, objective_value=-math.inf)

    incumbent_x: np.ndarray | None = None
    incumbent_obj = math.inf
    pruned_floor = math.inf      # lowest bound discarded by the gap cutoff
    seq = 0
    heap: list[tuple[float, int, np.ndarray, np.ndarray]] = []
    heapq.heappush(heap, (root.objective, seq,
                          comp.lower.copy(), comp.upper.copy()))

    def cutoff() -> float:
        if incumbent_obj is math.inf:
            return math.inf
        return incumbent_obj - opts.rel_gap * max(1.0, abs(incumbent_obj))

    def try_point(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> None:
        nonlocal incumbent_x, incumbent_obj
        xr = x.copy()
        if bin_idx.size:
            xr[bin_idx] = np.clip(np.round(xr[bin_idx]),
                                  lo[bin_idx], hi[bin_idx])
        if _row_feasible(comp, xr, comp.lower, comp.upper):
            obj = float(comp.c @ xr)
            if obj < incumbent_obj:
                incumbent_obj = obj
                incumbent_x = xr

    status = Status.OPTIMAL
    while heap:
        if timed_out():
            status = Status.GAP_LIMIT
            break
        bound, _, lo, hi = heapq.heappop(heap)
        if bound >= cutoff():
            pruned_floor = min(pruned_floor, bound)
            continue
        res = solve_compiled_lp(comp, lo, hi)
        if res.status != "optimal":
            continue
        if res.objective >= cutoff():
            pruned_floor = min(pruned_floor, res.objective)
            continue
        x = res.x
        assert x is not None
        frac = np.abs(x[bin_idx] - np.round(x[bin_idx])) if bin_idx.size \
            else np.zeros(0)
        if not bin_idx.size or frac.max() <= INT_TOL:
            if res.objective < incumbent_obj:
                incumbent_obj = res.objective
                incumbent_x = x.copy()
            continue
        try_point(x, lo, hi)
        fractional = bin_idx[frac > INT_TOL]
        if incumbent_x is None or res.objective < cutoff():
            # dive: pin every binary at its rounding and repair continuous part
            lo_d, hi_d = lo.copy(), hi.copy()
            pins = np.clip(np.round(x[bin_idx]), lo[bin_idx], hi[bin_idx])
            lo_d[bin_idx] = pins
            hi_d[bin_idx] = pins
            dive = solve_compiled_lp(comp, lo_d, hi_d)
            if dive.status == "optimal" and dive.objective < incumbent_obj:
                incumbent_obj = dive.objective
                incumbent_x = dive.x.copy()
        # branch on the most-fractional binary, lowest id on ties
        xf = x[fractional]
        j = int(fractional[np.argmin(np.abs(xf - 0.5))])
        for fix in (0.0, 1.0):
            lo_c, hi_c = lo.copy(), hi.copy()
            if fix == 0.0:
                hi_c[j] = 0.0
            else:
                lo_c[j] = 1.0
            if lo_c[j] > hi_c[j]:
                continue
            seq += 1
            heapq.heappush(heap, (res.objective, seq, lo_c, hi_c))

    if incumbent_x is None:
        if status is Status.GAP_LIMIT:
            return Solution(Status.GAP_LIMIT, mip_gap=math.inf)
        return Solution(Status.INFEASIBLE)

    finite_bounds = [b for b in [pruned_floor, *(e[0] for e in heap)]
                     if math.isfinite(b)]
    best_bound = min(finite_bounds) if finite_bounds else incumbent_obj
    gap = max(0.0, (incumbent_obj - best_bound) / max(1.0, abs(incumbent_obj)))
    status = Status.OPTIMAL if gap <= opts.rel_gap else Status.GAP_LIMIT
    values = {ref: float(incumbent_x[ref.id]) for ref in model.variable_refs}
    return Solution(status, values, incumbent_obj + comp.c0, mip_gap=gap)

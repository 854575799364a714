"""Bounded-variable two-phase primal simplex on dense numpy arrays.

The solver standardizes ``A x (<=|=|>=) b`` into ``[A I] [x;s] = b`` with
signed slack bounds, starts phase 1 from an all-artificial basis and keeps an
explicit dense basis inverse (product-form updates, periodic refactorization).
Dantzig pricing is used by default; Bland's rule is engaged after
``5 * (m + n)`` iterations to break cycling.  Intended for desk-scale models;
larger instances should go through an external backend.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (Model, ModelError, Sense, Solution, SolverNumericsError,
                    Status, VarKind)

FEAS_TOL = 1e-7     # absolute, on scaled rows
INT_TOL = 1e-6
DUAL_TOL = 1e-9
PIVOT_TOL = 1e-10
REFACTOR_EVERY = 150

_AT_LOWER, _AT_UPPER, _FREE, _BASIC = 0, 1, 2, 3


@dataclass
class CompiledLP:
    """Row-scaled arrays extracted once from a Model."""

    c: np.ndarray
    c0: float
    A: np.ndarray
    b: np.ndarray
    senses: list[Sense]
    lower: np.ndarray
    upper: np.ndarray
    binary_mask: np.ndarray
    names: list[str]

    @property
    def num_rows(self) -> int:
        return self.A.shape[0]

    @property
    def num_cols(self) -> int:
        return self.A.shape[1]


def compile_model(model: Model) -> CompiledLP:
    n = model.num_variables
    m = model.num_constraints
    c = np.zeros(n)
    for ref, coef in model.objective.terms.items():
        c[ref.id] += coef
    A = np.zeros((m, n))
    b = np.zeros(m)
    senses: list[Sense] = []
    for i, con in enumerate(model.constraints):
        for ref, coef in con.expression.terms.items():
            A[i, ref.id] += coef
        b[i] = con.rhs - con.expression.constant
        senses.append(con.sense)
    # row equilibration so FEAS_TOL applies uniformly
    if m:
        scale = np.maximum(np.abs(A).max(axis=1), 1e-12)
        scale = np.maximum(scale, 1.0e-6)
        A /= scale[:, None]
        b /= scale
    lower = np.array([d.lower for d in model.variable_defs], dtype=float)
    upper = np.array([d.upper for d in model.variable_defs], dtype=float)
    binary = np.array([d.kind is VarKind.BINARY for d in model.variable_defs])
    return CompiledLP(c=c, c0=model.objective.constant, A=A, b=b, senses=senses,
                      lower=lower, upper=upper, binary_mask=binary,
                      names=[r.name for r in model.variable_refs])


@dataclass
class LpResult:
    status: str                     # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None
    objective: float
    iterations: int


class _BoundedSimplex:
    """One LP solve.  Column order: structural | slack | artificial."""

    def __init__(self, comp: CompiledLP, lower: np.ndarray, upper: np.ndarray):
        self.A = comp.A
        self.b = comp.b
        self.m, self.n = comp.A.shape
        m, n = self.m, self.n
        self.nslack = m
        self.ntot = n + 2 * m       # artificials virtual at n + m + i
        lo = np.full(self.ntot, -np.inf)
        hi = np.full(self.ntot, np.inf)
        lo[:n] = lower
        hi[:n] = upper
        for i, s in enumerate(comp.senses):
            j = n + i
            if s is Sense.LE:
                lo[j], hi[j] = 0.0, np.inf
            elif s is Sense.GE:
                lo[j], hi[j] = -np.inf, 0.0
            else:
                lo[j], hi[j] = 0.0, 0.0
        lo[n + m:] = 0.0
        hi[n + m:] = np.inf
        if np.any(lo[:n] > hi[:n]):
            raise ModelError("inverted bounds passed to LP solve")
        self.lo, self.hi = lo, hi
        self.cost = np.concatenate([comp.c, np.zeros(2 * m)])
        self.iterations = 0

    # -- column access helpers (slacks and artificials stay virtual) --------

    def _col(self, j: int) -> np.ndarray:
        n, m = self.n, self.m
        if j < n:
            return self.A[:, j]
        col = np.zeros(m)
        if j < n + m:
            col[j - n] = 1.0
        else:
            col[j - n - m] = self.art_sign[j - n - m]
        return col

    def _price(self, cc: np.ndarray, y: np.ndarray) -> np.ndarray:
        n, m = self.n, self.m
        d = np.empty(self.ntot)
        d[:n] = cc[:n] - y @ self.A
        d[n:n + m] = cc[n:n + m] - y
        d[n + m:] = cc[n + m:] - y * self.art_sign
        return d

    # -- setup ---------------------------------------------------------------

    def _initial_state(self) -> None:
        n, m = self.n, self.m
        status = np.empty(self.ntot, dtype=np.int8)
        value = np.zeros(self.ntot)
        finite_lo = np.isfinite(self.lo)
        finite_hi = np.isfinite(self.hi)
        status[finite_lo] = _AT_LOWER
        value[finite_lo] = self.lo[finite_lo]
        only_hi = ~finite_lo & finite_hi
        status[only_hi] = _AT_UPPER
        value[only_hi] = self.hi[only_hi]
        status[~finite_lo & ~finite_hi] = _FREE
        resid = self.b - self.A @ value[:n] - value[n:n + m]
        self.art_sign = np.where(resid >= 0.0, 1.0, -1.0)
        self.basis = np.arange(n + m, n + 2 * m)
        status[self.basis] = _BASIC
        self.xB = np.abs(resid)
        self.status = status
        self.value = value
        self.Binv = np.diag(self.art_sign.copy()) if m else np.zeros((0, 0))
        self.locked = np.zeros(self.ntot, dtype=bool)
        self.pivots_since_refactor = 0

    def _refactor(self) -> None:
        m = self.m
        if m == 0:
            return
        B = np.column_stack([self._col(j) for j in self.basis])
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise SolverNumericsError("singular basis during refactorization") from exc
        v = self.value.copy()
        v[self.basis] = 0.0
        resid = self.b - self.A @ v[:self.n] - v[self.n:self.n + m]
        arts = self.basis >= self.n + m
        # nonbasic artificials are locked at zero, so only structural/slack
        # values enter the residual
        self.xB = self.Binv @ resid
        del arts
        self.pivots_since_refactor = 0

    # -- main loop -----------------------------------------------------------

    def _run(self, cc: np.ndarray, phase: int) -> str:
        m, n = self.m, self.n
        bland_after = 5 * (m + self.ntot)
        hard_cap = 100 * (m + self.ntot) + 20000
        fixed = (self.hi - self.lo) <= 0.0
        dtol = DUAL_TOL * max(1.0, float(np.abs(cc).max()) if cc.size else 1.0)
        local_iter = 0
        while True:
            local_iter += 1
            self.iterations += 1
            if local_iter > hard_cap:
                raise SolverNumericsError("cycling guard exceeded")
            bland = local_iter > bland_after
            cB = cc[self.basis] if m else np.zeros(0)
            y = cB @ self.Binv if m else np.zeros(0)
            d = self._price(cc, y)
            viol = np.zeros(self.ntot)
            at_lo = self.status == _AT_LOWER
            at_hi = self.status == _AT_UPPER
            free = self.status == _FREE
            usable = ~self.locked & ~fixed
            mask = at_lo & usable & (d < -dtol)
            viol[mask] = -d[mask]
            mask = at_hi & usable & (d > dtol)
            viol[mask] = d[mask]
            mask = free & usable & (np.abs(d) > dtol)
            viol[mask] = np.abs(d[mask])
            if not viol.any():
                return "optimal"
            if bland:
                q = int(np.nonzero(viol > 0)[0][0])
            else:
                q = int(np.argmax(viol))
            sigma = 1.0 if (self.status[q] == _AT_LOWER
                            or (self.status[q] == _FREE and d[q] < 0)) else -1.0
            w = self.Binv @ self._col(q) if m else np.zeros(0)
            rate = -sigma * w
            delta = np.full(m, np.inf)
            if m:
                dec = rate < -PIVOT_TOL
                inc = rate > PIVOT_TOL
                loB = self.lo[self.basis]
                hiB = self.hi[self.basis]
                with np.errstate(invalid="ignore"):
                    delta[dec] = (self.xB[dec] - loB[dec]) / (-rate[dec])
                    delta[inc] = (hiB[inc] - self.xB[inc]) / rate[inc]
                delta[np.isnan(delta)] = np.inf
                np.clip(delta, 0.0, None, out=delta)
            span = self.hi[q] - self.lo[q]
            step_basic = delta.min() if m else np.inf
            step = min(step_basic, span)
            if not np.isfinite(step):
                if phase == 1:
                    raise SolverNumericsError("phase-1 direction unbounded")
                return "unbounded"
            if span <= step_basic + 1e-9 and np.isfinite(span):
                # bound flip, no basis change
                self.status[q] = _AT_UPPER if sigma > 0 else _AT_LOWER
                self.value[q] = self.hi[q] if sigma > 0 else self.lo[q]
                if m:
                    self.xB += rate * span
                continue
            blockers = np.nonzero(delta <= step_basic + 1e-9)[0]
            if bland:
                r = int(blockers[np.argmin(self.basis[blockers])])
            else:
                r = int(blockers[np.argmax(np.abs(w[blockers]))])
            if abs(w[r]) < PIVOT_TOL:
                self._refactor()
                continue
            leaving = int(self.basis[r])
            enter_value = self.value[q] + sigma * step
            self.xB += rate * step
            if rate[r] < 0:
                self.status[leaving] = _AT_LOWER
                self.value[leaving] = self.lo[leaving]
            else:
                self.status[leaving] = _AT_UPPER
                self.value[leaving] = self.hi[leaving]
            if leaving >= n + m:
                self.locked[leaving] = True
                self.value[leaving] = 0.0
            self.basis[r] = q
            self.status[q] = _BASIC
            self.xB[r] = enter_value
            br = self.Binv[r].copy()
            self.Binv -= np.outer(w / w[r], br)
            self.Binv[r] = br / w[r]
            self.pivots_since_refactor += 1
            if self.pivots_since_refactor >= REFACTOR_EVERY:
                self._refactor()

    def _drive_out_artificials(self) -> None:
        n, m = self.n, self.m
        for i in range(m):
            j = int(self.basis[i])
            if j < n + m:
                continue
            row = self.Binv[i]
            coeffs = np.empty(n + m)
            coeffs[:n] = row @ self.A
            coeffs[n:] = row
            coeffs[self.status[:n + m] == _BASIC] = 0.0
            k = int(np.argmax(np.abs(coeffs)))
            if abs(coeffs[k]) < 1e-7:
                # redundant row: pin the artificial and leave it basic at zero
                self.lo[j] = self.hi[j] = 0.0
                continue
            w = self.Binv @ self._col(k)
            self.locked[j] = True
            self.value[j] = 0.0
            self.status[j] = _AT_LOWER
            self.basis[i] = k
            self.status[k] = _BASIC
            entering_value = self.value[k]
            self.xB[i] = entering_value
            br = self.Binv[i].copy()
            self.Binv -= np.outer(w / w[i], br)
            self.Binv[i] = br / w[i]

    def solve(self) -> LpResult:
        m, n = self.m, self.n
        self._initial_state()
        if m:
            p1_cost = np.zeros(self.ntot)
            p1_cost[n + m:] = 1.0
            self._run(p1_cost, phase=1)
            arts = self.basis >= n + m
            p1_obj = float(self.xB[arts].sum()) if arts.any() else 0.0
            feas_cut = FEAS_TOL * max(1.0, float(np.abs(self.b).max())) \
                * max(1.0, math.sqrt(m))
            if p1_obj > feas_cut:
                return LpResult("infeasible", None, math.nan, self.iterations)
            self._drive_out_artificials()
            self.locked[n + m:] = True
        status = self._run(self.cost, phase=2)
        if status == "unbounded":
            return LpResult("unbounded", None, -math.inf, self.iterations)
        # final accurate extraction: recompute basic values against the
        # actual basis matrix rather than the accumulated inverse
        if m:
            B = np.column_stack([self._col(j) for j in self.basis])
            v = self.value.copy()
            v[self.basis] = 0.0
            resid = self.b - self.A @ v[:n] - v[n:n + m]
            try:
                xB = np.linalg.solve(B, resid)
            except np.linalg.LinAlgError:
                xB = self.xB
            v[self.basis] = xB
        else:
            v = self.value
        x = v[:n].copy()
        obj = float(self.cost[:n] @ x)
        return LpResult("optimal", x, obj, self.iterations)


def solve_compiled_lp(comp: CompiledLP, lower: np.ndarray | None = None,
                      upper: np.ndarray | None = None) -> LpResult:
    lo = comp.lower if lower is None else lower
    hi = comp.upper if upper is None else upper
    return _BoundedSimplex(comp, lo, hi).solve()


def solve_lp(model: Model) -> Solution:
    """Solve the LP relaxation (integrality dropped, bounds kept)."""
    comp = compile_model(model)
    res = solve_compiled_lp(comp)
    if res.status == "infeasible":
        return Solution(Status.INFEASIBLE)
    if res.status == "unbounded":
        return Solution(Status.UNBOUNDED, objective_value=-math.inf)
    values = {ref: float(res.x[ref.id]) for ref in model.variable_refs}
    return Solution(Status.OPTIMAL, values, res.objective + comp.c0, mip_gap=0.0)

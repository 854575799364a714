"""Solver boundary: the built-in simplex/branch-and-bound and a HiGHS adapter.

Every backend consumes the same Model and returns the same Solution, so the
portfolio, stochastic and staging layers are solver-agnostic.  The built-in
backend is self-contained and deterministic; the external backend delegates
to HiGHS through scipy for production-scale instances.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog
from scipy.optimize import milp as scipy_milp

from .branch_bound import MilpOptions, solve_milp
from .model import Model, Sense, Solution, SolverNumericsError, Status, VarKind
from .simplex import solve_lp


class SolverBackend(ABC):
    name: str = "abstract"

    @abstractmethod
    def solve_lp(self, model: Model) -> Solution: ...

    @abstractmethod
    def solve_milp(self, model: Model,
                   options: MilpOptions | None = None) -> Solution: ...


class BuiltinSolver(SolverBackend):
    name = "builtin"

    def solve_lp(self, model: Model) -> Solution:
        return solve_lp(model)

    def solve_milp(self, model: Model,
                   options: MilpOptions | None = None) -> Solution:
        return solve_milp(model, options)


class HighsSolver(SolverBackend):
    """HiGHS via scipy: MILPs through milp(), pure LPs through linprog().

    Models without a single integer column are routed to linprog so the
    algorithm can be matched to the instance: interior point (with
    crossover, so the result is still a basic solution) for the big
    scenario-replicated stage models, where simplex crawls through the
    degenerate block structure, and dual simplex below that scale.
    """

    name = "external"

    #: nonzero count above which pure LPs go to the interior-point method
    IPM_NNZ_THRESHOLD = 150_000

    def _solve(self, model: Model, integrality: bool,
               options: MilpOptions | None) -> Solution:
        opts = options or MilpOptions()
        n = model.num_variables
        m = model.num_constraints
        c = np.zeros(n)
        for ref, coef in model.objective.terms.items():
            c[ref.id] += coef
        # sparse assembly; stage-scale scenario models would not fit a
        # dense matrix (duplicate coo entries sum, matching += semantics)
        rows: list[int] = []
        cols: list[int] = []
        vals: list[float] = []
        lb = np.empty(m)
        ub = np.empty(m)
        for i, con in enumerate(model.constraints):
            rhs = con.rhs - con.expression.constant
            for ref, coef in con.expression.terms.items():
                rows.append(i)
                cols.append(ref.id)
                vals.append(coef)
            if con.sense is Sense.LE:
                lb[i], ub[i] = -np.inf, rhs
            elif con.sense is Sense.GE:
                lb[i], ub[i] = rhs, np.inf
            else:
                lb[i] = ub[i] = rhs
        A = sp.csr_array(sp.coo_array((vals, (rows, cols)), shape=(m, n)))
        binary = np.array([d.kind is VarKind.BINARY
                           for d in model.variable_defs])
        lower = np.array([d.lower for d in model.variable_defs], dtype=float)
        upper = np.array([d.upper for d in model.variable_defs], dtype=float)
        if integrality and binary.any():
            res = self._run_milp(c, A, lb, ub, binary, lower, upper, opts)
        else:
            res = self._run_lp(c, A, lb, ub, lower, upper)
        if res.status == 2:
            return Solution(Status.INFEASIBLE)
        if res.status == 3:
            return Solution(Status.UNBOUNDED, objective_value=-math.inf)
        if res.status == 4 or (res.status == 0 and res.x is None):
            raise SolverNumericsError(f"external solver failure: {res.message}")
        if res.status == 1 and res.x is None:
            return Solution(Status.GAP_LIMIT, mip_gap=math.inf)
        values = {ref: float(res.x[ref.id]) for ref in model.variable_refs}
        gap = float(res.mip_gap) if getattr(res, "mip_gap", None) is not None \
            else 0.0
        status = Status.OPTIMAL if res.status == 0 else Status.GAP_LIMIT
        return Solution(status, values, float(res.fun) + model.objective.constant,
                        mip_gap=gap)

    def _run_milp(self, c, A, lb, ub, binary, lower, upper,
                  opts: MilpOptions):
        constraints = LinearConstraint(A, lb, ub) if A.shape[0] else ()
        milp_options: dict = {"mip_rel_gap": opts.rel_gap, "presolve": True}
        if opts.time_limit is not None:
            milp_options["time_limit"] = opts.time_limit
        return scipy_milp(c=c, constraints=constraints,
                          integrality=binary.astype(int),
                          bounds=Bounds(lower, upper), options=milp_options)

    def _run_lp(self, c, A, lb, ub, lower, upper):
        eq = lb == ub
        le = np.isfinite(ub) & ~eq
        ge = np.isfinite(lb) & ~eq
        a_ub = b_ub = a_eq = b_eq = None
        if eq.any():
            a_eq, b_eq = A[eq], ub[eq]
        if le.any() or ge.any():
            a_ub = sp.vstack([A[le], -A[ge]], format="csr")
            b_ub = np.concatenate([ub[le], -lb[ge]])
        method = "highs-ipm" if A.nnz >= self.IPM_NNZ_THRESHOLD else "highs"
        return linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                       bounds=np.column_stack([lower, upper]), method=method)

    def solve_lp(self, model: Model) -> Solution:
        return self._solve(model, integrality=False, options=None)

    def solve_milp(self, model: Model,
                   options: MilpOptions | None = None) -> Solution:
        return self._solve(model, integrality=True, options=options)


_BACKENDS = {"builtin": BuiltinSolver, "external": HighsSolver}


def get_solver(name: str) -> SolverBackend:
    try:
        return _BACKENDS[name]()
    except KeyError:
        raise ValueError(f"unknown solver {name!r}; "
                         f"choose from {sorted(_BACKENDS)}") from None

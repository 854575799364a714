"""Containers for linear and mixed-integer models.

A model is a list of bounded variables (continuous or binary), a list of
linear constraints and a linear objective that is always minimized.  The
containers are deliberately plain so that both the built-in solver and
external backends can consume them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping


class ModelError(ValueError):
    """Malformed model construction (duplicate names, bad bounds, ...)."""


class SolverNumericsError(RuntimeError):
    """Numerical failure inside a solve (cycling guard, singular basis)."""


class VarKind(str, Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"


class Sense(str, Enum):
    LE = "<="
    EQ = "="
    GE = ">="


class Status(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    GAP_LIMIT = "gap_limit"


@dataclass(frozen=True)
class VariableRef:
    """Lightweight handle to a model variable (ids are dense, 0-based)."""

    id: int
    name: str


@dataclass
class VariableDef:
    kind: VarKind = VarKind.CONTINUOUS
    lower: float = 0.0
    upper: float = math.inf

    def __post_init__(self) -> None:
        if math.isnan(self.lower) or math.isnan(self.upper):
            raise ModelError("variable bounds must not be NaN")
        if self.kind is VarKind.BINARY and math.isinf(self.upper):
            self.upper = 1.0
        if self.lower > self.upper:
            raise ModelError(f"lower bound {self.lower} exceeds upper {self.upper}")
        if self.kind is VarKind.BINARY:
            if self.lower < 0.0 or self.upper > 1.0:
                raise ModelError("binary bounds must lie within [0, 1]")


class LinearExpression:
    """Sparse linear expression: sum of coef * var plus a constant."""

    __slots__ = ("terms", "constant")

    def __init__(self, terms: Mapping[VariableRef, float] | None = None,
                 constant: float = 0.0) -> None:
        self.terms: dict[VariableRef, float] = dict(terms) if terms else {}
        self.constant = float(constant)

    def add_term(self, var: VariableRef, coef: float) -> "LinearExpression":
        if coef != 0.0:
            self.terms[var] = self.terms.get(var, 0.0) + float(coef)
        return self

    def add(self, other: "LinearExpression", scale: float = 1.0) -> "LinearExpression":
        for var, coef in other.terms.items():
            self.add_term(var, scale * coef)
        self.constant += scale * other.constant
        return self

    def normalized(self) -> "LinearExpression":
        """Drop exact-zero coefficients left behind by cancellation."""
        self.terms = {v: c for v, c in self.terms.items() if c != 0.0}
        return self

    def copy(self) -> "LinearExpression":
        return LinearExpression(self.terms, self.constant)

    def evaluate(self, values: Mapping[VariableRef, float]) -> float:
        return self.constant + sum(c * values[v] for v, c in self.terms.items())

    def __len__(self) -> int:
        return len(self.terms)


@dataclass
class Constraint:
    expression: LinearExpression
    sense: Sense
    rhs: float
    name: str = ""

    def __post_init__(self) -> None:
        if not math.isfinite(self.rhs):
            raise ModelError(f"constraint rhs must be finite, got {self.rhs}")


class Model:
    """A minimization MILP under construction."""

    def __init__(self, name: str = "model") -> None:
        self.name = name
        self.variable_defs: list[VariableDef] = []
        self.variable_refs: list[VariableRef] = []
        self._by_name: dict[str, VariableRef] = {}
        self.constraints: list[Constraint] = []
        self.objective = LinearExpression()

    # -- variables ---------------------------------------------------------

    def add_variable(self, definition: VariableDef, name: str) -> VariableRef:
        if name in self._by_name:
            raise ModelError(f"duplicate variable name {name!r}")
        ref = VariableRef(id=len(self.variable_defs), name=name)
        self.variable_defs.append(definition)
        self.variable_refs.append(ref)
        self._by_name[name] = ref
        return ref

    def variable(self, name: str) -> VariableRef:
        try:
            return self._by_name[name]
        except KeyError:
            raise ModelError(f"unknown variable {name!r}") from None

    def definition(self, ref: VariableRef) -> VariableDef:
        return self.variable_defs[ref.id]

    def set_bounds(self, ref: VariableRef, lower: float, upper: float) -> None:
        d = self.variable_defs[ref.id]
        if lower > upper:
            raise ModelError(f"bounds [{lower}, {upper}] on {ref.name} are inverted")
        d.lower = float(lower)
        d.upper = float(upper)

    def fix(self, ref: VariableRef, value: float) -> None:
        self.set_bounds(ref, value, value)

    @property
    def num_variables(self) -> int:
        return len(self.variable_defs)

    @property
    def num_binaries(self) -> int:
        return sum(1 for d in self.variable_defs if d.kind is VarKind.BINARY)

    def binary_refs(self) -> list[VariableRef]:
        return [r for r, d in zip(self.variable_refs, self.variable_defs)
                if d.kind is VarKind.BINARY]

    # -- constraints and objective ------------------------------------------

    def add_constraint(self, expression: LinearExpression, sense: Sense,
                       rhs: float, name: str = "") -> int:
        expression.normalized()
        idx = len(self.constraints)
        self.constraints.append(
            Constraint(expression, Sense(sense), float(rhs), name or f"c{idx}"))
        return idx

    def add_objective(self, expression: LinearExpression, weight: float = 1.0) -> None:
        self.objective.add(expression, weight)

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)


@dataclass
class Solution:
    status: Status
    values: dict[VariableRef, float] = field(default_factory=dict)
    objective_value: float = math.nan
    mip_gap: float = math.nan

    def value(self, ref: VariableRef) -> float:
        return self.values[ref]

    def by_name(self, model: Model, name: str) -> float:
        return self.values[model.variable(name)]


@dataclass
class Violation:
    kind: str            # "constraint" | "bound" | "integrality"
    name: str
    amount: float


def check_solution(model: Model, values: Mapping[VariableRef, float],
                   feas_tol: float = 1e-7, int_tol: float = 1e-6) -> list[Violation]:
    """Row-wise feasibility check; violations are scaled by row magnitude."""
    out: list[Violation] = []
    for con in model.constraints:
        lhs = con.expression.evaluate(values)
        scale = max(1.0, max((abs(c) for c in con.expression.terms.values()),
                             default=1.0), abs(con.rhs))
        resid = lhs - con.rhs
        if con.sense is Sense.LE:
            viol = resid
        elif con.sense is Sense.GE:
            viol = -resid
        else:
            viol = abs(resid)
        if viol > feas_tol * scale:
            out.append(Violation("constraint", con.name, viol / scale))
    for ref, d in zip(model.variable_refs, model.variable_defs):
        x = values[ref]
        span = max(1.0, abs(d.lower) if math.isfinite(d.lower) else 1.0,
                   abs(d.upper) if math.isfinite(d.upper) else 1.0)
        if x < d.lower - feas_tol * span or x > d.upper + feas_tol * span:
            out.append(Violation("bound", ref.name,
                                 max(d.lower - x, x - d.upper) / span))
        if d.kind is VarKind.BINARY and abs(x - round(x)) > int_tol:
            out.append(Violation("integrality", ref.name, abs(x - round(x))))
    return out

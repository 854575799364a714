"""Plain-text LP export (CPLEX-style keyword layout).

Layout, in order: an optional comment line, ``Minimize`` with a single
objective row, ``Subject To`` rows, ``Bounds``, ``Binary`` (only when binary
variables exist) and ``End``.  Variable names are sanitized to
``[A-Za-z0-9_.]`` and deduplicated deterministically.
"""
from __future__ import annotations

import math
import re

from .model import Model, ModelError, Sense, VarKind

_SENSE_TEXT = {Sense.LE: "<=", Sense.EQ: "=", Sense.GE: ">="}


def _num(v: float) -> str:
    return format(v, ".12g")


def _sanitize_names(model: Model) -> list[str]:
    seen: set[str] = set()
    out: list[str] = []
    for ref in model.variable_refs:
        s = re.sub(r"[^A-Za-z0-9_.]", "_", ref.name)
        if not s or not re.match(r"[A-Za-z_]", s[0]) or re.match(r"^[eE]\d", s):
            s = f"v_{s}"
        if s in seen:
            s = f"{s}_{ref.id}"
        seen.add(s)
        out.append(s)
    return out


def _expr_text(terms: list[tuple[int, float]], names: list[str]) -> str:
    parts: list[str] = []
    for vid, coef in terms:
        sign = "-" if coef < 0 else "+"
        mag = _num(abs(coef))
        if parts:
            parts.append(f"{sign} {mag} {names[vid]}")
        else:
            lead = "- " if sign == "-" else ""
            parts.append(f"{lead}{mag} {names[vid]}")
    return " ".join(parts)


def write_lp(model: Model) -> str:
    names = _sanitize_names(model)
    lines = [f"\\ {model.name}", "Minimize"]
    obj_terms = sorted(((r.id, c) for r, c in model.objective.terms.items()
                        if c != 0.0))
    obj = _expr_text(obj_terms, names)
    if model.objective.constant:
        cst = model.objective.constant
        obj = f"{obj} {'+' if cst > 0 else '-'} {_num(abs(cst))}" if obj \
            else _num(cst)
    lines.append(f" obj: {obj or '0'}")
    lines.append("Subject To")
    for con in model.constraints:
        terms = sorted(((r.id, c) for r, c in con.expression.terms.items()
                        if c != 0.0))
        if not terms:
            raise ModelError(f"constraint {con.name!r} has no variables")
        rhs = con.rhs - con.expression.constant
        lines.append(f" {con.name}: {_expr_text(terms, names)} "
                     f"{_SENSE_TEXT[con.sense]} {_num(rhs)}")
    lines.append("Bounds")
    for ref, d in zip(model.variable_refs, model.variable_defs):
        nm = names[ref.id]
        lo, hi = d.lower, d.upper
        if lo == 0.0 and hi == math.inf:
            continue
        if lo == hi:
            lines.append(f" {nm} = {_num(lo)}")
        elif not math.isfinite(lo) and not math.isfinite(hi):
            lines.append(f" {nm} free")
        elif not math.isfinite(lo):
            lines.append(f" -infinity <= {nm} <= {_num(hi)}")
        elif not math.isfinite(hi):
            lines.append(f" {nm} >= {_num(lo)}")
        else:
            lines.append(f" {_num(lo)} <= {nm} <= {_num(hi)}")
    binaries = [names[r.id] for r, d in zip(model.variable_refs,
                                            model.variable_defs)
                if d.kind is VarKind.BINARY]
    if binaries:
        lines.append("Binary")
        for nm in binaries:
            lines.append(f" {nm}")
    lines.append("End")
    return "\n".join(lines) + "\n"


def export_lp(model: Model, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(write_lp(model))

from .backends import BuiltinSolver, HighsSolver, SolverBackend, get_solver
from .branch_bound import MilpOptions, solve_milp
from .lp_text import export_lp, write_lp
from .model import (Constraint, LinearExpression, Model, ModelError, Sense,
                    Solution, SolverNumericsError, Status, VariableDef,
                    VariableRef, VarKind, Violation, check_solution)
from .simplex import FEAS_TOL, INT_TOL, compile_model, solve_lp

__all__ = [
    "BuiltinSolver", "Constraint", "FEAS_TOL", "HighsSolver", "INT_TOL",
    "LinearExpression", "MilpOptions", "Model", "ModelError", "Sense",
    "Solution", "SolverBackend", "SolverNumericsError", "Status",
    "VariableDef", "VariableRef", "VarKind", "Violation", "check_solution",
    "compile_model", "export_lp", "get_solver", "solve_lp", "solve_milp",
    "write_lp",
]

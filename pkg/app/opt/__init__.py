from app.opt.feasibility import Envelope, admissible_problem, promote, relax_row, speed_envelope
from app.opt.priorities import DEFAULT_PRIORITY_TABLE, PriorityBounds, PriorityWeights, assign_priorities
from app.opt.problem import ConstraintReport, QpParams, QpProblem, Snapshot, build_qp, check_constraints
from app.opt.safety import BARE, SafetyLayer
from app.opt.select import VelocityProgram, braking_program, exhaustive_best, select_optimal, solve_qp
from app.opt.solver import QpSolution, solve_dense_qp

__all__ = [
    "Envelope", "admissible_problem", "promote", "relax_row", "speed_envelope",
    "DEFAULT_PRIORITY_TABLE", "PriorityBounds", "PriorityWeights", "assign_priorities",
    "ConstraintReport", "QpParams", "QpProblem", "Snapshot", "build_qp", "check_constraints",
    "BARE", "SafetyLayer",
    "VelocityProgram", "braking_program", "exhaustive_best", "select_optimal", "solve_qp",
    "QpSolution", "solve_dense_qp",
]

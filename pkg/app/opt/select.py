# app/opt/select.py
"""Solve one QP per candidate sequence and keep the cheapest feasible program."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence

from app.auction import PrioritySequence, harmonic_alphas, physical_leaders
from app.geometry import DEFAULT_TABLE, ConflictTable
from app.opt.feasibility import admissible_problem
from app.opt.priorities import DEFAULT_PRIORITY_TABLE, PriorityBounds
from app.opt.problem import QpParams, QpProblem, Snapshot, build_qp
from app.opt.safety import BARE, SafetyLayer
from app.opt.solver import solve_dense_qp
from app.vehicle import SafetyMargins

logger = logging.getLogger(__name__)


@dataclass
class VelocityProgram:
    commands: Dict[int, float]
    objective_value: float
    sequence: Optional[PrioritySequence]
    solve_status: str = "optimal"
    iterations: int = 0
    fallback: bool = False
    candidate_index: int = -1
    repairs: int = 0        # sequence swaps made while screening candidates
    relaxed: int = 0        # rows of the chosen problem raised to admit hard braking

    @property
    def optimal(self) -> bool:
        return self.solve_status == "optimal"


def solve_qp(problem: QpProblem, params: QpParams = QpParams()) -> VelocityProgram:
    if problem.n == 0:
        return VelocityProgram({}, 0.0, problem.sequence)
    A, b = problem.all_rows()
    sol = solve_dense_qp(problem.hess_diag, problem.linear, A, b, tol=params.tol, max_iter=params.max_iter)
    if sol.status != "optimal":
        return VelocityProgram({}, float("inf"), problem.sequence, "infeasible", sol.iterations)
    u = sol.x
    return VelocityProgram(
        commands={vid: float(x) for vid, x in zip(problem.ids, u)},
        objective_value=problem.objective(u),
        sequence=problem.sequence,
        iterations=sol.iterations,
        relaxed=len(problem.relaxed),
    )


def braking_program(snapshot: Snapshot, params: QpParams, sequence: Optional[PrioritySequence]) -> VelocityProgram:
    """Every vehicle decelerates at a_min for one planning step."""
    commands = {s.id: max(0.0, s.v + s.a_min * params.plan_dt) for s in snapshot.vehicles}
    return VelocityProgram(commands, float("inf"), sequence, "infeasible", fallback=True)


def select_optimal(
    snapshot: Snapshot,
    candidates: Sequence[PrioritySequence],
    params: QpParams = QpParams(),
    margins: SafetyMargins = SafetyMargins(),
    speed_limit: float = 20.0,
    priority_table: Mapping[str, PriorityBounds] = DEFAULT_PRIORITY_TABLE,
    conflict_table: ConflictTable = DEFAULT_TABLE,
    safety: SafetyLayer = BARE,
) -> VelocityProgram:
    """
    Argmin objective over candidates; the lowest index wins ties.

    Each candidate is screened with the speed envelope first. Orders no
    vehicle set can follow are repaired or skipped without a solve, and a
    candidate repaired into an order already solved is not solved twice.
    """
    if not candidates:
        raise ValueError("select_optimal needs at least one candidate")
    leaders = physical_leaders(list(snapshot.vehicles))

    def build(seq: PrioritySequence) -> QpProblem:
        problem = build_qp(snapshot, seq, params, margins, speed_limit, priority_table, conflict_table)
        return safety.apply(problem, params.plan_dt)

    best: Optional[VelocityProgram] = None
    total_iter = 0
    repairs = 0
    solved = set()
    for k, seq in enumerate(candidates):
        problem, swaps = admissible_problem(build, seq, leaders, params.tol, params.max_repairs)
        repairs += swaps
        if problem is None or problem.sequence.order in solved:
            continue
        solved.add(problem.sequence.order)
        prog = solve_qp(problem, params)
        total_iter += prog.iterations
        if prog.optimal and (best is None or prog.objective_value < best.objective_value):
            prog.candidate_index = k
            best = prog
    if best is None:
        logger.warning("all %d candidates infeasible; braking %d vehicles", len(candidates), len(snapshot.vehicles))
        best = braking_program(snapshot, params, candidates[0])
    best.iterations = total_iter
    best.repairs = repairs
    return best


def lane_respecting_orders(snapshot: Snapshot):
    """Every ordering of the snapshot that keeps same-lane physical order."""
    leaders = physical_leaders(list(snapshot.vehicles))
    ids = [s.id for s in snapshot.vehicles]
    for perm in itertools.permutations(ids):
        seen = set()
        ok = True
        for vid in perm:
            lead = leaders.get(vid)
            if lead is not None and lead not in seen:
                ok = False
                break
            seen.add(vid)
        if ok:
            yield perm


def exhaustive_best(
    snapshot: Snapshot,
    params: QpParams = QpParams(),
    margins: SafetyMargins = SafetyMargins(),
    speed_limit: float = 20.0,
    **kwargs,
) -> VelocityProgram:
    """Sequence oracle: solve every lane-respecting order (small n only)."""
    candidates = [
        PrioritySequence(order=tuple(p), slot_alphas=harmonic_alphas(len(p)))
        for p in lane_respecting_orders(snapshot)
    ]
    if not candidates:
        return VelocityProgram({}, 0.0, PrioritySequence((), ()))
    return select_optimal(snapshot, candidates, params, margins, speed_limit, **kwargs)

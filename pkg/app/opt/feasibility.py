# app/opt/feasibility.py
"""
Exact feasibility test for one velocity QP, and the sequence repair built on it.

Every general row bounds its head column from above by a non-negative
combination of other columns (floor rows bound it from below). Visiting the
columns so that a row's other columns come before its head, the largest
speed each vehicle can be given is

    upper_k = min(hi_k, min_r (b_r − Σ_{m≠k} A_rm·upper_m) / A_rk)

and the problem is feasible iff upper ≥ lower everywhere; `upper` itself is
then a feasible point. This costs one pass over the rows instead of a
solve.

A vehicle with upper < lower cannot slow down enough for the order it was
given. If the row holding it back is a crossing row, the vehicle (with any
same-lane vehicles in front of it) is moved ahead of the one it yields to.
If it is held back through its leader, the leader is looked at instead.
Rows no order can change (committed vehicles, a leader already at its own
speed box) get their right-hand side raised just enough to admit hard
braking of the blocked vehicle.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.auction import PrioritySequence
from app.opt.problem import QpProblem

logger = logging.getLogger(__name__)


@dataclass
class Envelope:
    upper: np.ndarray
    lower: np.ndarray
    binding: List[int]          # row that set upper[k]; −1 for the speed box
    blocked: Optional[int]      # first column with upper < lower

    @property
    def feasible(self) -> bool:
        return self.blocked is None


def _visit_order(problem: QpProblem) -> Optional[List[int]]:
    """Columns with every row dependency first, sequence rank breaking ties; None on a cycle."""
    n = problem.n
    deps: List[set] = [set() for _ in range(n)]
    for r, head in enumerate(problem.heads):
        for m in np.flatnonzero(problem.A[r]):
            if m != head:
                deps[head].add(int(m))
    users: List[List[int]] = [[] for _ in range(n)]
    for k, ds in enumerate(deps):
        for m in ds:
            users[m].append(k)
    rank = problem.sequence.rank()
    key = [rank.get(vid, k) for k, vid in enumerate(problem.ids)]
    waiting = [len(ds) for ds in deps]
    ready = [(key[k], k) for k in range(n) if waiting[k] == 0]
    heapq.heapify(ready)
    order: List[int] = []
    while ready:
        _, k = heapq.heappop(ready)
        order.append(k)
        for u in users[k]:
            waiting[u] -= 1
            if waiting[u] == 0:
                heapq.heappush(ready, (key[u], u))
    return order if len(order) == n else None


def speed_envelope(problem: QpProblem, tol: float = 1e-6) -> Optional[Envelope]:
    """Largest admissible speed per vehicle; None when the rows form a cycle."""
    order = _visit_order(problem)
    if order is None:
        return None
    A, b = problem.A, problem.b
    upper = problem.hi.astype(float).copy()
    lower = problem.lo.astype(float).copy()
    binding = [-1] * problem.n
    caps: Dict[int, List[int]] = {}
    floors: Dict[int, List[int]] = {}
    for r, head in enumerate(problem.heads):
        (caps if A[r, head] > 0 else floors).setdefault(head, []).append(r)

    for k in order:
        rows = caps.get(k)
        if rows:
            coef = A[rows, k]
            rest = A[rows] @ upper - coef * upper[k]
            bounds = (b[rows] - rest) / coef
            j = int(np.argmin(bounds))
            if bounds[j] < upper[k]:
                upper[k] = bounds[j]
                binding[k] = rows[j]
        for r in floors.get(k, ()):
            lower[k] = max(lower[k], b[r] / A[r, k])
        if upper[k] < lower[k] - tol:
            return Envelope(upper, lower, binding, k)
    return Envelope(upper, lower, binding, None)


def _yield_target(problem: QpProblem, env: Envelope, k: int) -> Optional[Tuple[int, int]]:
    """(column to move, column to move it ahead of), or None when no order change helps."""
    node, visited = k, set()
    while node not in visited:
        visited.add(node)
        r = env.binding[node]
        if r < 0:
            return None
        others = np.flatnonzero(problem.A[r] < 0)
        if not len(others):
            return None
        other = int(others[0])
        if problem.kinds[r] == "lateral":
            return node, other
        node = other
    return None


def relax_row(problem: QpProblem, env: Envelope, k: int) -> Optional[QpProblem]:
    """Raise the row binding column k so that k can brake to its lower bound."""
    r = env.binding[k]
    if r < 0:
        return None
    row = problem.A[r]
    b = problem.b.copy()
    b[r] = row[k] * env.lower[k] + (row @ env.upper - row[k] * env.upper[k])
    logger.debug("relaxing %s row %d for vehicle %s", problem.kinds[r], r, problem.ids[k])
    return problem.with_rows(problem.A, b, problem.relaxed + [r])


def promote(
    order: Sequence[int],
    vid: int,
    ahead_of: int,
    leaders: Mapping[int, Optional[int]],
) -> Tuple[int, ...]:
    """Move `vid`, with its same-lane vehicles still behind `ahead_of`, to just before `ahead_of`."""
    pos = {v: k for k, v in enumerate(order)}
    target = pos[ahead_of]
    chain = [vid]
    lead = leaders.get(vid)
    while lead is not None and lead in pos and pos[lead] > target:
        chain.append(lead)
        lead = leaders.get(lead)
    chain.reverse()
    moving = set(chain)
    rest = [v for v in order if v not in moving]
    at = rest.index(ahead_of)
    return tuple(rest[:at] + chain + rest[at:])


def admissible_problem(
    build: Callable[[PrioritySequence], QpProblem],
    seq: PrioritySequence,
    leaders: Mapping[int, Optional[int]],
    tol: float = 1e-6,
    max_repairs: int = 8,
) -> Tuple[Optional[QpProblem], int]:
    """
    Problem for `seq`, or for the closest reordering every vehicle can
    physically follow. Returns (problem, swaps); problem is None when the
    swaps run out or start repeating.
    """
    seen = {tuple(seq.order)}
    swaps = 0
    problem = build(seq)
    for _ in range(len(problem.b) + max_repairs + 1):
        env = speed_envelope(problem, tol)
        if env is None or env.feasible:
            return problem, swaps
        k = env.blocked
        step = _yield_target(problem, env, k)
        if step is None:
            problem = relax_row(problem, env, k)
            if problem is None:
                return None, swaps
            continue
        if swaps >= max_repairs:
            return None, swaps
        mover, ahead_of = step
        order = promote(problem.sequence.order, problem.ids[mover], problem.ids[ahead_of], leaders)
        if order in seen:
            return None, swaps
        seen.add(order)
        swaps += 1
        problem = build(replace(problem.sequence, order=order))
    return None, swaps

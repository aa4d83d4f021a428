# app/opt/problem.py
"""
Build the per-candidate command-velocity QP.

Objective:  Σ w_speed·(u − speed_limit)² + w_var·(u − v)²
            w_speed = λ·speed priority, w_var = (1 − λ)·smoothness priority
            (both priorities are 1 when use_priorities is off)

Rows are stored as A u ≤ b, tagged with their family:

  longitudinal  same-lane leader/follower gap after one planning step
  lateral       conflicting pair crosses in sequence order
  floor         lane-front vehicle that only ever goes first keeps moving

Each row also records its head column: the vehicle the row bounds from
above (follower, later vehicle). Every other coefficient in a row is
≤ 0, which is what app.opt.feasibility relies on.

build_qp emits the bare rows. Headway and clearance padding live in
app.opt.safety and are applied on top.

Speed-limit and acceleration boxes are kept as separate lo/hi vectors so
the checker can report them per family.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from app.auction import PrioritySequence, physical_leaders
from app.errors import ConfigError, QpBuildError
from app.geometry import DEFAULT_TABLE, ConflictTable
from app.opt.priorities import DEFAULT_PRIORITY_TABLE, PriorityBounds, assign_priorities
from app.vehicle import SafetyMargins, VehicleState

FAMILIES = ("longitudinal", "lateral", "floor", "speed_limit", "acceleration")


@dataclass(frozen=True)
class QpParams:
    lam: float = 0.7
    plan_dt: float = 1.0
    use_priorities: bool = True
    u_floor: float = 0.1
    tol: float = 1e-6
    max_iter: int = 10_000
    max_repairs: int = 8     # sequence swaps tried per candidate before it counts as infeasible

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"must lie in [0, 1], got {self.lam}", "qp.lam")
        if self.plan_dt <= 0:
            raise ConfigError(f"must be > 0, got {self.plan_dt}", "qp.plan_dt")
        if self.u_floor < 0:
            raise ConfigError(f"must be >= 0, got {self.u_floor}", "qp.u_floor")
        if self.tol <= 0 or self.max_iter < 1:
            raise ConfigError("tol must be > 0 and max_iter >= 1", "qp")
        if self.max_repairs < 0:
            raise ConfigError(f"must be >= 0, got {self.max_repairs}", "qp.max_repairs")


@dataclass(frozen=True)
class Snapshot:
    vehicles: Tuple[VehicleState, ...]              # control zone, s > 0: decision variables
    committed: Tuple[VehicleState, ...] = ()        # inside the conflict zone, speed held

    @classmethod
    def from_states(cls, states: Sequence[VehicleState]) -> "Snapshot":
        return cls(
            vehicles=tuple(s for s in states if not s.committed),
            committed=tuple(s for s in states if s.committed),
        )


@dataclass
class QpProblem:
    ids: Tuple[int, ...]
    sequence: PrioritySequence
    w_speed: np.ndarray          # λ·speed priority
    w_var: np.ndarray            # (1 − λ)·smoothness priority
    v: np.ndarray
    speed_limit: float
    acc_lo: np.ndarray           # a_min·plan_dt
    acc_hi: np.ndarray           # a_max·plan_dt
    A: np.ndarray
    b: np.ndarray
    kinds: List[str] = field(default_factory=list)
    heads: List[int] = field(default_factory=list)
    relaxed: List[int] = field(default_factory=list)    # rows whose b was raised to admit the lo box

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def hess_diag(self) -> np.ndarray:
        return 2.0 * (self.w_speed + self.w_var)

    @property
    def linear(self) -> np.ndarray:
        return -2.0 * (self.w_speed * self.speed_limit + self.w_var * self.v)

    @property
    def target(self) -> np.ndarray:
        """Unconstrained minimizer (weighted average of speed_limit and v)."""
        return (self.w_speed * self.speed_limit + self.w_var * self.v) / (self.w_speed + self.w_var)

    @property
    def lo(self) -> np.ndarray:
        return np.maximum(0.0, self.v + self.acc_lo)

    @property
    def hi(self) -> np.ndarray:
        return np.minimum(self.speed_limit, self.v + self.acc_hi)

    def objective(self, u: np.ndarray) -> float:
        u = np.asarray(u, dtype=float)
        return float(np.sum(self.w_speed * (u - self.speed_limit) ** 2 + self.w_var * (u - self.v) ** 2))

    def all_rows(self) -> Tuple[np.ndarray, np.ndarray]:
        """General rows plus both boxes, for the solver."""
        eye = np.eye(self.n)
        A = np.vstack([self.A, eye, -eye]) if self.n else np.zeros((0, 0))
        b = np.concatenate([self.b, self.hi, -self.lo]) if self.n else np.zeros(0)
        return A, b

    def with_rows(self, A: np.ndarray, b: np.ndarray, relaxed: Sequence[int] = ()) -> "QpProblem":
        return replace(self, A=A, b=b, kinds=list(self.kinds), heads=list(self.heads), relaxed=list(relaxed))


@dataclass(frozen=True)
class ConstraintReport:
    by_family: Dict[str, float]

    @property
    def max_violation(self) -> float:
        return max(self.by_family.values(), default=0.0)

    def ok(self, tol: float = 1e-6) -> bool:
        return self.max_violation <= tol


class _Rows:
    def __init__(self, n: int):
        self.n = n
        self.entries: List[Tuple[int, int, float]] = []
        self.rhs: List[float] = []
        self.kinds: List[str] = []
        self.heads: List[int] = []

    def add(self, coeffs: Mapping[int, float], rhs: float, kind: str, head: int) -> None:
        r = len(self.rhs)
        self.entries.extend((r, k, c) for k, c in coeffs.items())
        self.rhs.append(float(rhs))
        self.kinds.append(kind)
        self.heads.append(head)

    def arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        A = np.zeros((len(self.rhs), self.n))
        for r, k, c in self.entries:
            A[r, k] += c
        return A, np.array(self.rhs, dtype=float)


def lateral_coefficients(first: VehicleState, second: VehicleState, dt: float, lateral_margin: float) -> Tuple[float, float]:
    """
    (a, c) of the crossing row a·u_second ≤ c·u_first.

    a is what `first` still has to cover to clear the conflict zone, c what
    `second` has left to the line, both one half step ahead. Once c ≤ 0 the
    half-step form has no admissible u_second > 0, so c falls back to the
    plain distance s_second: the later vehicle's crossing time s/u is kept
    beyond the earlier one's clearing time a/u_first.
    """
    a = first.s - 0.5 * dt * first.v + first.length + lateral_margin
    c = second.s - 0.5 * dt * second.v
    if c <= 0:
        c = second.s
    return a, c


def build_qp(
    snapshot: Snapshot,
    seq: PrioritySequence,
    params: QpParams = QpParams(),
    margins: SafetyMargins = SafetyMargins(),
    speed_limit: float = 20.0,
    priority_table: Mapping[str, PriorityBounds] = DEFAULT_PRIORITY_TABLE,
    conflict_table: ConflictTable = DEFAULT_TABLE,
) -> QpProblem:
    vehicles = list(snapshot.vehicles)
    ids = tuple(s.id for s in vehicles)
    if sorted(ids) != sorted(seq.order) or len(set(seq.order)) != len(seq.order):
        raise QpBuildError(f"sequence {seq.order} does not cover snapshot vehicles {sorted(ids)}")
    col = {vid: k for k, vid in enumerate(ids)}
    by_id = {s.id: s for s in vehicles}
    rank = seq.rank()
    n = len(ids)
    dt = params.plan_dt

    if params.use_priorities:
        pri = [assign_priorities(s, priority_table) for s in vehicles]
        p_s = np.array([p.speed_priority for p in pri])
        p_v = np.array([p.variation_priority for p in pri])
    else:
        p_s = p_v = np.ones(n)
    w_speed = params.lam * p_s
    w_var = (1.0 - params.lam) * p_v

    rows = _Rows(n)
    everyone = vehicles + list(snapshot.committed)
    leaders = physical_leaders(everyone)
    everyone_by_id = {s.id: s for s in everyone}

    # longitudinal: closest leader only, chained per lane
    for f in vehicles:
        lead_id = leaders.get(f.id)
        if lead_id is None:
            continue
        lead = everyone_by_id[lead_id]
        rhs = (f.v - lead.v) + (2.0 / dt) * (lead.s - f.s + lead.length + margins.rear)
        if lead.id in col:
            # u_L − u_f ≥ rhs
            rows.add({col[f.id]: 1.0, col[lead.id]: -1.0}, -rhs, "longitudinal", col[f.id])
        else:
            # committed leader holds its speed
            rows.add({col[f.id]: 1.0}, lead.v - rhs, "longitudinal", col[f.id])

    later: set = set()
    earlier: set = set()

    for x, y in itertools.combinations(vehicles, 2):
        if not conflict_table.conflicts(x.group, y.group):
            continue
        i, j = (x, y) if rank[x.id] < rank[y.id] else (y, x)
        a, c = lateral_coefficients(i, j, dt, margins.lateral)
        if a <= 0:
            continue
        later.add(j.id)
        earlier.add(i.id)
        # a·u_j − c·u_i ≤ 0
        rows.add({col[j.id]: a, col[i.id]: -c}, 0.0, "lateral", col[j.id])

    for i in snapshot.committed:
        for j in vehicles:
            if not conflict_table.conflicts(i.group, j.group):
                continue
            a, c = lateral_coefficients(i, j, dt, margins.lateral)
            if a <= 0:
                continue
            later.add(j.id)
            rows.add({col[j.id]: a}, c * i.v, "lateral", col[j.id])

    hi = np.array([min(speed_limit, s.v + s.a_max * dt) for s in vehicles])
    for s in vehicles:
        k = col[s.id]
        if s.id in earlier and s.id not in later and leaders.get(s.id) is None:
            rows.add({k: -1.0}, -min(params.u_floor, hi[k]), "floor", k)

    A, b = rows.arrays()
    return QpProblem(
        ids=ids,
        sequence=seq,
        w_speed=w_speed,
        w_var=w_var,
        v=np.array([by_id[i].v for i in ids]),
        speed_limit=speed_limit,
        acc_lo=np.array([by_id[i].a_min * dt for i in ids]),
        acc_hi=np.array([by_id[i].a_max * dt for i in ids]),
        A=A,
        b=b,
        kinds=rows.kinds,
        heads=rows.heads,
    )


def check_constraints(problem: QpProblem, u: Sequence[float]) -> ConstraintReport:
    """Worst violation per family, recomputed from the problem data alone."""
    u = np.asarray(u, dtype=float)
    out = {f: 0.0 for f in FAMILIES}
    if problem.n == 0:
        return ConstraintReport(out)
    if problem.A.size:
        resid = problem.A @ u - problem.b
        for kind, r in zip(problem.kinds, resid):
            out[kind] = max(out[kind], float(r))
    out["speed_limit"] = float(max(np.max(-u), np.max(u - problem.speed_limit), 0.0))
    dv = u - problem.v
    out["acceleration"] = float(max(np.max(problem.acc_lo - dv), np.max(dv - problem.acc_hi), 0.0))
    return ConstraintReport(out)

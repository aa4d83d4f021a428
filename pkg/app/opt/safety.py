# app/opt/safety.py
"""
Planner safety layer: padding applied on top of the bare QP rows.

  time_headway       h seconds of extra gap per m/s of follower speed; the
                     follower coefficient of a longitudinal row grows by 2h/dt
  lateral_clearance  metres added to the conflict-zone distance the earlier
                     vehicle must cover; the later vehicle's coefficient of a
                     lateral row grows by that amount

Both only ever grow the head coefficient, so padded rows stay tighter than
the bare ones. The arrival process reads the same headway when it picks
entry speeds. SafetyLayer(0, 0) leaves a problem unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

from app.errors import ConfigError
from app.opt.problem import QpProblem


@dataclass(frozen=True)
class SafetyLayer:
    time_headway: float = 1.0        # s
    lateral_clearance: float = 2.0   # m

    def __post_init__(self):
        if self.time_headway < 0:
            raise ConfigError(f"must be >= 0, got {self.time_headway}", "safety.time_headway")
        if self.lateral_clearance < 0:
            raise ConfigError(f"must be >= 0, got {self.lateral_clearance}", "safety.lateral_clearance")

    @property
    def is_bare(self) -> bool:
        return self.time_headway == 0 and self.lateral_clearance == 0

    def apply(self, problem: QpProblem, plan_dt: float) -> QpProblem:
        if self.is_bare or not problem.kinds:
            return problem
        pad = {
            "longitudinal": 2.0 * self.time_headway / plan_dt,
            "lateral": self.lateral_clearance,
        }
        A = problem.A.copy()
        for r, (kind, head) in enumerate(zip(problem.kinds, problem.heads)):
            A[r, head] += pad.get(kind, 0.0)
        return problem.with_rows(A, problem.b.copy(), problem.relaxed)


BARE = SafetyLayer(time_headway=0.0, lateral_clearance=0.0)

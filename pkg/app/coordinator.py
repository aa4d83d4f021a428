# app/coordinator.py
"""
One 100 ms control cycle: snapshot → auction candidates → QP per candidate
→ cheapest program → commands for control-zone vehicles.

Committed vehicles (inside the conflict zone) and anything outside the
control zone receive no command.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from app.auction import generate_candidates
from app.opt.problem import Snapshot
from app.opt.select import VelocityProgram, select_optimal


@dataclass(frozen=True)
class ControlCycleRecord:
    cycle: int
    t: float
    n: int
    candidates: int
    objective: float
    plan_ms: float
    fallback: bool = False
    iterations: int = 0
    repairs: int = 0
    relaxed: int = 0

    def as_event(self) -> Dict:
        row = dataclasses.asdict(self)
        row["kind"] = "cycle"
        return row


def plan(snapshot: Snapshot, scenario, seed: int, strategy: Optional[str] = None) -> Tuple[VelocityProgram, int]:
    """Auction + QP selection for one snapshot; returns (program, candidate count)."""
    params = scenario.auction if strategy is None else dataclasses.replace(scenario.auction, strategy=strategy)
    spec = scenario.intersection
    typical_length = min(c.length for c in scenario.classes.values())
    transit = (typical_length + scenario.margins.lateral) / spec.speed_limit
    candidates = generate_candidates(
        snapshot.vehicles, params.omega_set, params.c1, params.c2, seed,
        params=params, speed_limit=spec.speed_limit, transit=transit,
    )
    program = select_optimal(
        snapshot, candidates, scenario.qp, scenario.margins, spec.speed_limit, scenario.priorities,
        safety=scenario.safety,
    )
    return program, len(candidates)


def control_cycle(
    world,
    scenario,
    rng: np.random.Generator,
    cycle: int = 0,
    strategy: Optional[str] = None,
) -> Tuple[Dict[int, float], ControlCycleRecord]:
    start = time.perf_counter()
    snapshot = world.snapshot()
    seed = int(rng.integers(0, 2**31 - 1))
    if not snapshot.vehicles:
        ms = (time.perf_counter() - start) * 1000.0
        return {}, ControlCycleRecord(cycle, world.t, 0, 0, 0.0, ms)
    program, n_candidates = plan(snapshot, scenario, seed, strategy)
    ms = (time.perf_counter() - start) * 1000.0
    record = ControlCycleRecord(
        cycle=cycle,
        t=world.t,
        n=len(snapshot.vehicles),
        candidates=n_candidates,
        objective=program.objective_value,
        plan_ms=ms,
        fallback=program.fallback,
        iterations=program.iterations,
        repairs=program.repairs,
        relaxed=program.relaxed,
    )
    return dict(program.commands), record

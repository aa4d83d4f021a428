# app/sim/runner.py
"""
Run one (controller, scenario, seed) simulation and return its event log.

Events (dicts, in time order):
  spawn      t, id, class, road, group
  cycle      coop-style controllers only: ControlCycleRecord fields
  depart     t, id, class, ttg, fuel
  collision  t, type, a, b        (each pair once per run)
  end        t, spawned, departed, in_system, queued, fuel_residual, ...
"""

from __future__ import annotations

import logging
from typing import Dict, List

import numpy as np

from app.errors import UnknownControllerError
from app.metrics import RunMetrics, aggregate
from app.sim.baselines import (
    ActuatedSignalController,
    CoopController,
    FixedSignalController,
    StopSignController,
)
from app.sim.world import World, detect_collisions

logger = logging.getLogger(__name__)

CONTROLLER_KINDS = ("coop", "stop_sign", "traffic_light", "actuated_light", "fifo_auction", "random_auction")


def make_controller(kind: str, scenario, rng: np.random.Generator):
    if kind == "coop":
        return CoopController(scenario, rng)
    if kind == "fifo_auction":
        return CoopController(scenario, rng, strategy="fifo")
    if kind == "random_auction":
        return CoopController(scenario, rng, strategy="random")
    if kind == "stop_sign":
        return StopSignController(scenario)
    if kind == "traffic_light":
        return FixedSignalController(scenario)
    if kind == "actuated_light":
        return ActuatedSignalController(scenario)
    raise UnknownControllerError(f"unknown controller {kind!r}, expected one of {CONTROLLER_KINDS}")


def simulate(kind: str, scenario, seed: int, record_cycles: bool = True) -> List[Dict]:
    if kind not in CONTROLLER_KINDS:
        raise UnknownControllerError(f"unknown controller {kind!r}, expected one of {CONTROLLER_KINDS}")
    arrival_ss, control_ss = np.random.SeedSequence(seed).spawn(2)
    world = World.create(scenario, np.random.default_rng(arrival_ss))
    controller = make_controller(kind, scenario, np.random.default_rng(control_ss))
    sim = scenario.sim
    width = scenario.intersection.conflict_zone_width
    events: List[Dict] = []
    seen = set()

    for _ in range(int(round(sim.duration / sim.dt))):
        for st in world.spawn():
            events.append({
                "kind": "spawn", "t": world.t, "id": st.id, "class": st.vclass.name,
                "road": st.group.road, "group": str(st.group),
            })
        commands = controller.commands(world)
        if record_cycles and controller.last_record is not None:
            events.append(controller.last_record.as_event())
        for d in world.advance(commands, controller.plan_dt):
            events.append({"kind": "depart", "t": d.t, "id": d.id, "class": d.vclass, "ttg": d.time_to_goal, "fuel": d.fuel})
        for c in detect_collisions(world.states(), width, world.t):
            key = (c.kind,) + c.vehicles
            if key in seen:
                continue
            seen.add(key)
            logger.warning("%s collision %s at t=%.1f (%s)", c.kind, c.vehicles, c.time, kind)
            events.append({"kind": "collision", "t": c.time, "type": c.kind, "a": c.vehicles[0], "b": c.vehicles[1]})

    events.append({
        "kind": "end",
        "t": world.t,
        "duration": sim.duration,
        "warmup": sim.warmup,
        "spawned": world.spawned,
        "departed": world.departed,
        "in_system": len(world.vehicles),
        "queued": world.arrivals.queued,
        "arrived": world.arrivals.arrived,
        "fuel_residual": world.residual_fuel(),
        "fuel_residual_truck": world.residual_fuel("truck"),
    })
    return events


def run_baseline(kind: str, scenario, seed: int) -> RunMetrics:
    return aggregate(simulate(kind, scenario, seed))

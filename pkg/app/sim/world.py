# app/sim/world.py
"""
Discrete-time world: vehicles on four approaches, motion at the 0.1 s
tick, conflict-zone exit, per-tick fuel integration and the collision oracle.

A vehicle is in the control zone while s > 0 and occupies the conflict
zone while −(length + lateral margin) < s ≤ 0; past that it departs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Set, Tuple

import numpy as np

from app.geometry import DEFAULT_TABLE, ConflictTable
from app.metrics import fuel_rate
from app.opt.problem import Snapshot
from app.sim.arrivals import ArrivalProcess
from app.vehicle import VehicleState, track_command


@dataclass(frozen=True)
class CollisionEvent:
    kind: str                    # "rear_end" | "lateral"
    vehicles: Tuple[int, int]
    time: float


@dataclass
class Departure:
    id: int
    t: float
    vclass: str
    time_to_goal: float
    fuel: float


@dataclass
class World:
    scenario: "Scenario"
    arrivals: ArrivalProcess
    t: float = 0.0
    tick: int = 0
    vehicles: Dict[int, VehicleState] = field(default_factory=dict)
    fuel: Dict[int, float] = field(default_factory=dict)
    spawned: int = 0
    departed: int = 0
    hold_speed: Dict[int, float] = field(default_factory=dict)
    seen_collisions: Set[Tuple[str, int, int]] = field(default_factory=set)

    @classmethod
    def create(cls, scenario, rng: np.random.Generator) -> "World":
        process = ArrivalProcess(
            spec=scenario.arrivals,
            intersection=scenario.intersection,
            rng=rng,
            classes=scenario.classes,
            margins=scenario.margins,
            plan_dt=scenario.qp.plan_dt,
            time_headway=scenario.safety.time_headway,
        )
        return cls(scenario=scenario, arrivals=process)

    # ---- views ----

    @property
    def exit_distance(self) -> float:
        return self.scenario.intersection.conflict_zone_width

    def states(self) -> List[VehicleState]:
        return list(self.vehicles.values())

    def in_control_zone(self) -> List[VehicleState]:
        return [s for s in self.vehicles.values() if s.s > 0]

    def in_conflict_zone(self) -> List[VehicleState]:
        return [s for s in self.vehicles.values() if s.s <= 0]

    def snapshot(self) -> Snapshot:
        return Snapshot.from_states(self.states())

    def conservation_ok(self) -> bool:
        return self.spawned == len(self.in_control_zone()) + len(self.in_conflict_zone()) + self.departed

    # ---- dynamics ----

    def spawn(self) -> List[VehicleState]:
        new = self.arrivals.spawn(self.scenario.sim.dt, self.states(), self.t)
        for st in new:
            self.vehicles[st.id] = st
            self.fuel[st.id] = 0.0
        self.spawned += len(new)
        return new

    def advance(self, commands: Mapping[int, float], plan_dt: float) -> List[Departure]:
        """
        Move every vehicle one tick. Control-zone vehicles track their
        command (or hold speed without one); committed vehicles track their
        command if given, else hold max(entry speed, min transit speed).
        """
        sim = self.scenario.sim
        dt = sim.dt
        limit = self.scenario.intersection.speed_limit
        measuring = self.t >= sim.warmup
        out: List[Departure] = []
        for vid in list(self.vehicles):
            st = self.vehicles[vid]
            if st.committed and vid not in commands:
                target = self.hold_speed.setdefault(vid, max(st.v, sim.min_transit_speed))
            else:
                target = commands.get(vid, st.v)
            new = track_command(st, target, dt, plan_dt, limit)
            if new.committed and not st.committed:
                self.hold_speed[vid] = max(new.v, sim.min_transit_speed)
            if measuring:
                accel = (new.v - st.v) / dt
                self.fuel[vid] += fuel_rate(new.v, accel, st.vclass) * dt
            if new.s <= -(new.length + self.exit_distance):
                del self.vehicles[vid]
                self.hold_speed.pop(vid, None)
                out.append(Departure(vid, self.t + dt, st.vclass.name, self.t + dt - st.spawn_time, self.fuel.pop(vid)))
                self.departed += 1
            else:
                self.vehicles[vid] = new
        self.t = round(self.t + dt, 9)
        self.tick += 1
        return out

    def residual_fuel(self, vclass: Optional[str] = None) -> float:
        return float(sum(
            f for vid, f in self.fuel.items()
            if vclass is None or self.vehicles[vid].vclass.name == vclass
        ))


def detect_collisions(
    states, conflict_zone_width: float, t: float = 0.0, table: ConflictTable = DEFAULT_TABLE,
) -> List[CollisionEvent]:
    """
    rear_end: same-lane follower's front is past the leader's rear (contact).
    lateral:  conflicting groups both inside the conflict zone.
    """
    if isinstance(states, World):
        states = states.states()
    events: List[CollisionEvent] = []
    lanes: Dict[Tuple[int, int], List[VehicleState]] = {}
    for st in states:
        lanes.setdefault(st.lane_key, []).append(st)
    for queue in lanes.values():
        queue.sort(key=lambda st: (st.s, st.id))
        for lead, foll in zip(queue, queue[1:]):
            if lead.committed and lead.group != foll.group:
                continue  # paths diverge inside the box
            if foll.s - lead.s - lead.length < 0:
                events.append(CollisionEvent("rear_end", (lead.id, foll.id), t))
    inside = [st for st in states if -(st.length + conflict_zone_width) < st.s < 0]
    for a, b in itertools.combinations(sorted(inside, key=lambda st: st.id), 2):
        if table.conflicts(a.group, b.group):
            events.append(CollisionEvent("lateral", (a.id, b.id), t))
    return events

# app/sim/baselines.py
"""
Controllers the runner can drive:

  CoopController         auction + QP every tick (also fifo / random bids)
  StopSignController     all-way stop, FIFO with group release
  FixedSignalController  two-phase fixed cycle, demand-proportional split
  ActuatedSignalController  gap-out / max-out two-phase signal

Signal and stop-sign vehicles use the safe-speed car-following rule and
need a conflict-zone grant before crossing. A grant is refused while any
conflicting vehicle holds one, so baselines stay collision-free.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set

import numpy as np

from app.auction import physical_leaders
from app.coordinator import ControlCycleRecord, control_cycle
from app.geometry import DEFAULT_TABLE, axis_of
from app.sim.following import safe_speed, stop_line_speed
from app.vehicle import VehicleState


STOP_OFFSET = 0.5        # m short of the line where waiting vehicles halt
STOPPED_SPEED = 0.1      # m/s
STOP_ZONE = 3.0          # m; a standstill closer than this counts as a stop at the sign
PRESENCE_DISTANCE = 10.0 # m; queued vehicles this close hold an actuated green


class CoopController:
    """Auction + QP each tick. `strategy` swaps the bid rule (fifo, random)."""

    def __init__(self, scenario, rng: np.random.Generator, strategy: Optional[str] = None):
        self.scenario = scenario
        self.rng = rng
        self.strategy = strategy
        self.plan_dt = scenario.qp.plan_dt
        self.cycle = 0
        self.last_record: Optional[ControlCycleRecord] = None

    def commands(self, world) -> Dict[int, float]:
        cmds, self.last_record = control_cycle(world, self.scenario, self.rng, self.cycle, self.strategy)
        self.cycle += 1
        return cmds


@dataclass
class ReservationController:
    scenario: object
    granted: Set[int] = field(default_factory=set)
    request_time: Dict[int, float] = field(default_factory=dict)
    last_record: Optional[ControlCycleRecord] = None

    @property
    def plan_dt(self) -> float:
        return self.scenario.sim.dt

    # subclasses decide who may ask for the box right now
    def update(self, world) -> None:
        pass

    def eligible(self, st: VehicleState, world) -> bool:
        return True

    def _requesters(self, world, leaders) -> List[VehicleState]:
        window = self.scenario.signals.request_distance
        out = []
        for st in world.in_control_zone():
            if st.id in self.granted or st.s > window:
                continue
            lead = leaders.get(st.id)
            if lead is not None and lead not in self.granted:
                continue
            self.request_time.setdefault(st.id, world.t)
            out.append(st)
        return sorted(out, key=lambda st: (self.request_time[st.id], st.id))

    def _grant(self, world, leaders) -> None:
        holders = [world.vehicles[v] for v in self.granted]
        blocked: List[VehicleState] = []
        for st in self._requesters(world, leaders):
            clash = any(DEFAULT_TABLE.conflicts(st.group, h.group) for h in holders)
            queue_jump = any(DEFAULT_TABLE.conflicts(st.group, w.group) for w in blocked)
            if self.eligible(st, world) and not clash and not queue_jump:
                self.granted.add(st.id)
                holders.append(st)
            else:
                blocked.append(st)

    def _targets(self, world, leaders) -> Dict[int, float]:
        spec = self.scenario.intersection
        rear = self.scenario.margins.rear
        reaction = self.scenario.signals.reaction_time
        out: Dict[int, float] = {}
        for st in world.states():
            target = spec.speed_limit
            lead_id = leaders.get(st.id)
            if lead_id is not None:
                lead = world.vehicles[lead_id]
                if not (lead.committed and lead.group != st.group):
                    gap = st.s - lead.s - lead.length - rear
                    target = min(target, safe_speed(gap, lead.v, st.a_min, lead.a_min, reaction))
            if not st.committed and st.id not in self.granted:
                target = min(target, stop_line_speed(st.s - STOP_OFFSET, st.a_min, self.scenario.sim.dt))
            out[st.id] = max(target, 0.0)
        return out

    def commands(self, world) -> Dict[int, float]:
        self.granted &= set(world.vehicles)
        self.granted |= {st.id for st in world.in_conflict_zone()}
        for vid in [v for v in self.request_time if v not in world.vehicles]:
            del self.request_time[vid]
        self.update(world)
        leaders = physical_leaders(world.states())
        self._grant(world, leaders)
        return self._targets(world, leaders)


@dataclass
class StopSignController(ReservationController):
    stopped_at: Dict[int, float] = field(default_factory=dict)

    def update(self, world) -> None:
        for st in world.in_control_zone():
            if st.id not in self.stopped_at and st.s <= STOP_ZONE and st.v <= STOPPED_SPEED:
                self.stopped_at[st.id] = world.t
        for vid in [v for v in self.stopped_at if v not in world.vehicles]:
            del self.stopped_at[vid]

    def _requesters(self, world, leaders) -> List[VehicleState]:
        base = super()._requesters(world, leaders)
        waiting = [st for st in base if st.id in self.stopped_at]
        return sorted(waiting, key=lambda st: (self.stopped_at[st.id], st.id))

    def eligible(self, st: VehicleState, world) -> bool:
        return world.t - self.stopped_at[st.id] >= self.scenario.signals.stop_dwell


def green_split(scenario) -> float:
    """Axis-A green time; the rest of the cycle minus two all-reds goes to axis B."""
    sig = scenario.signals
    usable = sig.cycle - 2 * sig.all_red
    fa = scenario.arrivals.axis_flow("A")
    fb = scenario.arrivals.axis_flow("B")
    share = 0.5 if fa + fb <= 0 else fa / (fa + fb)
    return min(max(usable * share, sig.min_green), usable - sig.min_green)


@dataclass
class FixedSignalController(ReservationController):
    green_a: float = 0.0

    def __post_init__(self):
        self.green_a = green_split(self.scenario)

    def phase(self, t: float):
        """(green axis or None, seconds of green left)."""
        sig = self.scenario.signals
        usable = sig.cycle - 2 * sig.all_red
        green_b = usable - self.green_a
        tm = t % sig.cycle
        if tm < self.green_a:
            return "A", self.green_a - tm
        tm -= self.green_a + sig.all_red
        if 0 <= tm < green_b:
            return "B", green_b - tm
        return None, 0.0

    def eligible(self, st: VehicleState, world) -> bool:
        axis, left = self.phase(world.t)
        if axis != axis_of(st.group.road):
            return False
        eta = st.s / max(st.v, 1.0)
        return eta <= left + self.scenario.signals.all_red


@dataclass
class ActuatedSignalController(ReservationController):
    axis: str = "A"
    state: str = "green"      # "green" | "clearance"
    since: float = 0.0

    def _demand(self, world, axis: str, headway: Optional[float]) -> bool:
        for st in world.in_control_zone():
            if axis_of(st.group.road) != axis:
                continue
            if headway is None:
                return True
            if st.s <= max(st.v * headway, PRESENCE_DISTANCE):
                return True
        return False

    def update(self, world) -> None:
        sig = self.scenario.signals
        elapsed = world.t - self.since
        other = "B" if self.axis == "A" else "A"
        if self.state == "clearance":
            if elapsed >= sig.all_red:
                self.state, self.axis, self.since = "green", other, world.t
            return
        if elapsed < sig.min_green or not self._demand(world, other, None):
            return
        maxed_out = elapsed >= sig.max_green
        gapped_out = not self._demand(world, self.axis, sig.extension_headway)
        if maxed_out or gapped_out:
            self.state, self.since = "clearance", world.t

    def eligible(self, st: VehicleState, world) -> bool:
        return self.state == "green" and axis_of(st.group.road) == self.axis

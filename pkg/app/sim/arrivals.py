# app/sim/arrivals.py
"""
Thinned-Poisson arrivals per road, queued per lane until the entry cell
at the outer edge of the control zone is free.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Deque, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.errors import ConfigError
from app.geometry import AXES, ROADS, IntersectionSpec, assign_group
from app.sim.following import max_entry_speed, safe_speed
from app.vehicle import DEFAULT_CLASSES, SafetyMargins, VehicleClass, VehicleState

PROB_TOL = 1e-9


@dataclass(frozen=True)
class ArrivalSpec:
    flows: Tuple[float, float, float, float] = (1300.0, 1300.0, 1300.0, 1300.0)   # veh/h per road
    turn_split: Tuple[float, float, float] = (0.25, 0.5, 0.25)                    # right, straight, left
    class_mix: Tuple[Tuple[str, float], ...] = (("passenger", 0.9), ("truck", 0.08), ("emergency", 0.02))
    preference: Tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "flows", tuple(float(f) for f in self.flows))
        object.__setattr__(self, "turn_split", tuple(float(p) for p in self.turn_split))
        mix = self.class_mix.items() if isinstance(self.class_mix, Mapping) else self.class_mix
        object.__setattr__(self, "class_mix", tuple((str(k), float(p)) for k, p in mix))
        if len(self.flows) != len(ROADS) or any(f < 0 for f in self.flows):
            raise ConfigError(f"need 4 non-negative per-road flows, got {self.flows}", "arrivals.flows")
        if len(self.turn_split) != 3 or any(p < 0 for p in self.turn_split) or abs(sum(self.turn_split) - 1) > PROB_TOL:
            raise ConfigError(f"turn split must be 3 probabilities summing to 1, got {self.turn_split}", "arrivals.turn_split")
        probs = [p for _, p in self.class_mix]
        if not probs or any(p < 0 for p in probs) or abs(sum(probs) - 1) > PROB_TOL:
            raise ConfigError(f"class mix must sum to 1, got {dict(self.class_mix)}", "arrivals.class_mix")
        lo, hi = self.preference
        if not 0.0 <= lo <= hi <= 1.0:
            raise ConfigError(f"preference bounds must satisfy 0 <= lo <= hi <= 1, got {self.preference}", "arrivals.preference")

    @property
    def total(self) -> float:
        return float(sum(self.flows))

    def with_total(self, total: float, ratio: float = 1.0) -> "ArrivalSpec":
        """Split `total` veh/h as ratio:1 between axis A and axis B, evenly per arm."""
        if total < 0 or ratio <= 0:
            raise ConfigError(f"need total >= 0 and ratio > 0, got {total}, {ratio}", "arrivals")
        per_a = total * ratio / (2.0 * (ratio + 1.0))
        per_b = total / (2.0 * (ratio + 1.0))
        flows = tuple(per_a if r in AXES["A"] else per_b for r in ROADS)
        return replace(self, flows=flows)

    @classmethod
    def for_total(cls, total: float, ratio: float = 1.0, **kwargs) -> "ArrivalSpec":
        return cls(**kwargs).with_total(total, ratio)

    def axis_flow(self, axis: str) -> float:
        return float(sum(self.flows[r] for r in AXES[axis]))


@dataclass
class PendingArrival:
    road: int
    intention: int
    vclass: VehicleClass
    preference: float
    t_arrival: float


@dataclass
class ArrivalProcess:
    spec: ArrivalSpec
    intersection: IntersectionSpec
    rng: np.random.Generator
    classes: Mapping[str, VehicleClass] = field(default_factory=lambda: dict(DEFAULT_CLASSES))
    margins: SafetyMargins = field(default_factory=SafetyMargins)
    plan_dt: float = 1.0
    time_headway: float = 1.0
    next_id: int = 0
    arrived: int = 0
    queues: Dict[Tuple[int, int], Deque[PendingArrival]] = field(default_factory=dict)

    def __post_init__(self):
        missing = [name for name, _ in self.spec.class_mix if name not in self.classes]
        if missing:
            raise ConfigError(f"class mix names unknown classes {missing}", "arrivals.class_mix")
        self._class_names = [name for name, _ in self.spec.class_mix]
        self._class_probs = np.array([p for _, p in self.spec.class_mix])

    @property
    def queued(self) -> int:
        return sum(len(q) for q in self.queues.values())

    def draw(self, dt: float, t: float) -> int:
        """Bernoulli(flow·dt) per road; new arrivals join their lane queue."""
        count = 0
        for road in ROADS:
            p = self.spec.flows[road] / 3600.0 * dt
            if p <= 0 or self.rng.random() >= p:
                continue
            intention = int(self.rng.choice(3, p=self.spec.turn_split))
            vclass = self.classes[self._class_names[int(self.rng.choice(len(self._class_names), p=self._class_probs))]]
            lo, hi = self.spec.preference
            pref = float(self.rng.uniform(lo, hi))
            lane = self.intersection.lane_for(intention)
            self.queues.setdefault((road, lane), deque()).append(PendingArrival(road, intention, vclass, pref, t))
            count += 1
        self.arrived += count
        return count

    def _entry_speed(self, head: PendingArrival, last: Optional[VehicleState]) -> float:
        limit = self.intersection.speed_limit
        if last is None:
            return limit
        zone_length = self.intersection.control_zone_length
        gap_total = zone_length - last.s
        if gap_total < last.length + self.margins.rear:
            return -1.0
        v_safe = safe_speed(
            gap_total - last.length - self.margins.rear, last.v,
            head.vclass.a_min, last.a_min, self.plan_dt + self.time_headway,
        )
        leader_lo = max(0.0, last.v + last.a_min * self.plan_dt)
        v_row = max_entry_speed(
            gap_total, last.v, leader_lo, last.length, self.margins.rear,
            head.vclass.a_min, self.plan_dt, self.time_headway,
        )
        return min(limit, v_safe, v_row)

    def spawn(self, dt: float, existing: Sequence[VehicleState], t: float) -> List[VehicleState]:
        """Draw this tick's arrivals, then release each lane's queue head if its entry is free."""
        self.draw(dt, t)
        last_in_lane: Dict[Tuple[int, int], VehicleState] = {}
        for st in existing:
            cur = last_in_lane.get(st.lane_key)
            if cur is None or st.s > cur.s:
                last_in_lane[st.lane_key] = st
        out: List[VehicleState] = []
        for key in sorted(self.queues):
            queue = self.queues[key]
            if not queue:
                continue
            head = queue[0]
            v0 = self._entry_speed(head, last_in_lane.get(key))
            if v0 < 0:
                continue
            queue.popleft()
            out.append(
                VehicleState(
                    id=self.next_id,
                    s=self.intersection.control_zone_length,
                    v=v0,
                    lane=key[1],
                    wait_time=0.0,
                    vclass=head.vclass,
                    preference=head.preference,
                    group=assign_group(head.road, head.intention),
                    spawn_time=t,
                )
            )
            self.next_id += 1
        return out


def spawn(process: ArrivalProcess, dt: float, existing: Sequence[VehicleState] = (), t: float = 0.0) -> List[VehicleState]:
    return process.spawn(dt, existing, t)

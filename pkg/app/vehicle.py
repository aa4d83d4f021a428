# app/vehicle.py
"""
Vehicle classes, the per-vehicle state vector and the two motion updates:

- step_position: planner-side trapezoid update under a reachable command.
- track_command: the local controller executed every 0.1 s tick; saturates
  instead of failing.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, Optional, Tuple

from app.errors import CommandOutOfReach, ConfigError
from app.geometry import LaneGroup

REACH_TOL = 1e-9


@dataclass(frozen=True)
class VehicleClass:
    name: str
    length: float
    a_max: float
    a_min: float
    assertiveness_range: Tuple[float, float]
    fuel_scale: float = 1.0

    def __post_init__(self):
        low, high = self.assertiveness_range
        if not (self.a_min < 0 < self.a_max):
            raise ConfigError(f"need a_min < 0 < a_max, got {self.a_min}, {self.a_max}", f"classes.{self.name}")
        if self.length <= 0:
            raise ConfigError(f"length must be > 0, got {self.length}", f"classes.{self.name}.length")
        if low > high:
            raise ConfigError(f"assertiveness low > high ({low} > {high})", f"classes.{self.name}.assertiveness_range")
        if self.fuel_scale <= 0:
            raise ConfigError(f"fuel_scale must be > 0", f"classes.{self.name}.fuel_scale")

    def assertiveness(self, preference: float) -> float:
        """Linear in driver preference across the class range."""
        low, high = self.assertiveness_range
        return low + preference * (high - low)


PASSENGER = VehicleClass("passenger", 5.0, 2.6, -4.5, (1.0, 5.0), 1.0)
TRUCK = VehicleClass("truck", 12.0, 1.3, -3.5, (2.0, 6.0), 3.0)
EMERGENCY = VehicleClass("emergency", 6.0, 3.0, -5.0, (7.0, 10.0), 1.2)

DEFAULT_CLASSES: Dict[str, VehicleClass] = {c.name: c for c in (PASSENGER, TRUCK, EMERGENCY)}


@dataclass(frozen=True)
class SafetyMargins:
    rear: float = 2.0      # m kept behind a leader
    lateral: float = 25.0  # m of conflict-zone transit distance

    def __post_init__(self):
        if self.rear <= 0 or self.lateral <= 0:
            raise ConfigError(f"safety margins must be > 0, got rear={self.rear}, lateral={self.lateral}", "margins")


@dataclass(frozen=True)
class VehicleState:
    id: int
    s: float            # distance to conflict-zone entry; negative once inside
    v: float
    lane: int
    wait_time: float
    vclass: VehicleClass
    preference: float   # d_i in [0, 1]
    group: LaneGroup
    spawn_time: float = 0.0

    @property
    def length(self) -> float:
        return self.vclass.length

    @property
    def a_max(self) -> float:
        return self.vclass.a_max

    @property
    def a_min(self) -> float:
        return self.vclass.a_min

    @property
    def lane_key(self) -> Tuple[int, int]:
        """(road, lane): vehicles sharing this key queue behind each other."""
        return (self.group.road, self.lane)

    @property
    def committed(self) -> bool:
        return self.s <= 0.0


def reachable_band(state: VehicleState, dt: float, speed_limit: float) -> Tuple[float, float]:
    lo = max(0.0, state.v + state.a_min * dt)
    hi = min(speed_limit, state.v + state.a_max * dt)
    return lo, hi


def step_position(state: VehicleState, u: float, dt: float, speed_limit: float = 20.0) -> VehicleState:
    if dt == 0:
        return state
    if dt < 0:
        raise CommandOutOfReach(f"dt must be >= 0, got {dt}")
    lo, hi = reachable_band(state, dt, speed_limit)
    if u < lo - REACH_TOL or u > hi + REACH_TOL:
        raise CommandOutOfReach(
            f"vehicle {state.id}: command {u:.4f} outside reachable band [{lo:.4f}, {hi:.4f}] for dt={dt}"
        )
    return replace(
        state,
        s=state.s - dt * (state.v + u) / 2.0,
        v=u,
        wait_time=state.wait_time + dt,
    )


def track_command(
    state: VehicleState,
    u_target: float,
    dt_exec: float,
    plan_dt: Optional[float] = None,
    speed_limit: float = 20.0,
) -> VehicleState:
    """Hold a = clamp((u − v)/plan_dt, a_min, a_max) for one tick."""
    horizon = dt_exec if plan_dt is None else plan_dt
    a = (u_target - state.v) / horizon
    a = min(max(a, state.a_min), state.a_max)
    v_end = min(max(state.v + a * dt_exec, 0.0), speed_limit)
    return replace(
        state,
        s=state.s - dt_exec * (state.v + v_end) / 2.0,
        v=v_end,
        wait_time=state.wait_time + dt_exec,
    )

# app/opt/priorities.py
"""Per-class speed / speed-variation priority bounds and the preference interpolation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Tuple

from app.errors import ConfigError
from app.vehicle import VehicleState


@dataclass(frozen=True)
class PriorityBounds:
    speed: Tuple[float, float]       # speed priority range
    variation: Tuple[float, float]   # smoothness priority range

    def __post_init__(self):
        for name, (lo, hi) in (("speed", self.speed), ("variation", self.variation)):
            if not 0 < lo <= hi:
                raise ConfigError(f"need 0 < lo <= hi, got ({lo}, {hi})", f"priorities.{name}")


@dataclass(frozen=True)
class PriorityWeights:
    speed_priority: float
    variation_priority: float


DEFAULT_PRIORITY_TABLE: Dict[str, PriorityBounds] = {
    "passenger": PriorityBounds(speed=(0.5, 2.0), variation=(0.5, 2.0)),
    "truck": PriorityBounds(speed=(0.3, 1.0), variation=(2.0, 4.0)),
    "emergency": PriorityBounds(speed=(3.0, 5.0), variation=(0.5, 1.0)),
}


def assign_priorities(
    state: VehicleState,
    table: Mapping[str, PriorityBounds] = DEFAULT_PRIORITY_TABLE,
) -> PriorityWeights:
    """High preference → speed-seeking; low preference → smooth / fuel-saving."""
    try:
        bounds = table[state.vclass.name]
    except KeyError:
        raise ConfigError(f"no priority bounds for class {state.vclass.name!r}", "priorities") from None
    d = state.preference
    s_lo, s_hi = bounds.speed
    v_lo, v_hi = bounds.variation
    return PriorityWeights(
        speed_priority=s_lo + d * (s_hi - s_lo),
        variation_priority=v_hi - d * (v_hi - v_lo),
    )

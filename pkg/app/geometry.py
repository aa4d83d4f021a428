# app/geometry.py
"""
Four-arm intersection geometry: control zone, conflict zone, lanes,
trajectory groups ("road-intention" labels) and the non-conflict table.

Roads 0/1 and 2/3 face each other. Axis "A" is roads {0, 1}, axis "B" is
roads {2, 3}; signal phases and unbalanced flow ratios are expressed per axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, Mapping, Tuple

from app.errors import GeometryError

ROADS: Tuple[int, ...] = (0, 1, 2, 3)
RIGHT_TURN, STRAIGHT, LEFT_TURN = 0, 1, 2
INTENTIONS: Tuple[int, ...] = (RIGHT_TURN, STRAIGHT, LEFT_TURN)

OPPOSITE: Dict[int, int] = {0: 1, 1: 0, 2: 3, 3: 2}
AXES: Dict[str, Tuple[int, int]] = {"A": (0, 1), "B": (2, 3)}


def axis_of(road: int) -> str:
    return "A" if road in AXES["A"] else "B"


@dataclass(frozen=True)
class IntersectionSpec:
    control_zone_length: float = 150.0   # m
    conflict_zone_width: float = 25.0    # m, same as the lateral margin
    lanes_per_road: int = 3
    speed_limit: float = 20.0            # m/s
    roads: Tuple[int, ...] = ROADS

    def __post_init__(self):
        if self.control_zone_length <= 0:
            raise GeometryError(f"control_zone_length must be > 0, got {self.control_zone_length}")
        if self.conflict_zone_width <= 0:
            raise GeometryError(f"conflict_zone_width must be > 0, got {self.conflict_zone_width}")
        if self.lanes_per_road < 1:
            raise GeometryError(f"lanes_per_road must be >= 1, got {self.lanes_per_road}")
        if self.speed_limit <= 0:
            raise GeometryError(f"speed_limit must be > 0, got {self.speed_limit}")
        if tuple(self.roads) != ROADS:
            raise GeometryError(f"roads are fixed to {ROADS}, got {self.roads}")

    def lane_for(self, intention: int) -> int:
        """Lane index a vehicle with `intention` spawns into (right turn → lane 0)."""
        if intention not in INTENTIONS:
            raise GeometryError(f"unknown intention {intention}")
        return int(intention * (self.lanes_per_road - 1) / 2 + 0.5)


@dataclass(frozen=True, order=True)
class LaneGroup:
    road: int
    intention: int

    def __post_init__(self):
        if self.road not in ROADS:
            raise GeometryError(f"road must be one of {ROADS}, got {self.road}")
        if self.intention not in INTENTIONS:
            raise GeometryError(f"intention must be one of {INTENTIONS}, got {self.intention}")

    def __str__(self) -> str:
        return f"{self.road}-{self.intention}"

    @property
    def is_right_turn(self) -> bool:
        return self.intention == RIGHT_TURN

    @classmethod
    def parse(cls, text: str) -> "LaneGroup":
        try:
            road, intention = (int(p) for p in str(text).strip().split("-"))
        except ValueError as exc:
            raise GeometryError(f"bad group label {text!r}, expected 'road-intention'") from exc
        return cls(road, intention)


ALL_GROUPS: Tuple[LaneGroup, ...] = tuple(LaneGroup(r, i) for r in ROADS for i in INTENTIONS)

# Rows for every straight / left-turn group; right turns are free.
_NON_CONFLICT_ROWS: Dict[str, Tuple[str, ...]] = {
    "0-1": ("0-2", "1-1", "2-2"),
    "0-2": ("0-1", "1-2", "3-1"),
    "1-1": ("0-1", "1-2", "3-2"),
    "1-2": ("0-2", "1-1", "2-1"),
    "2-1": ("1-2", "2-2", "3-1"),
    "2-2": ("0-1", "2-1", "3-2"),
    "3-1": ("0-2", "2-1", "3-2"),
    "3-2": ("1-1", "2-2", "3-1"),
}


@dataclass(frozen=True, eq=False)
class ConflictTable:
    non_conflict_sets: Mapping[LaneGroup, FrozenSet[LaneGroup]]
    right_turn_groups: FrozenSet[LaneGroup] = field(
        default_factory=lambda: frozenset(g for g in ALL_GROUPS if g.is_right_turn)
    )

    @classmethod
    def default(cls) -> "ConflictTable":
        sets = {
            LaneGroup.parse(k): frozenset(LaneGroup.parse(x) for x in row)
            for k, row in _NON_CONFLICT_ROWS.items()
        }
        return cls(non_conflict_sets=sets)

    @classmethod
    def from_rows(cls, rows: Mapping[str, Iterable[str]]) -> "ConflictTable":
        sets = {LaneGroup.parse(k): frozenset(LaneGroup.parse(x) for x in v) for k, v in rows.items()}
        table = cls(non_conflict_sets=sets)
        if not table.is_symmetric():
            raise GeometryError("non-conflict table is not symmetric")
        return table

    def non_conflicting(self, g: LaneGroup) -> FrozenSet[LaneGroup]:
        return self.non_conflict_sets.get(g, frozenset()) | self.right_turn_groups

    def conflicts(self, a: LaneGroup, b: LaneGroup) -> bool:
        if a.is_right_turn or b.is_right_turn:
            return False
        if a == b:
            # same trajectory: longitudinal constraints handle ordering
            return False
        return b not in self.non_conflict_sets.get(a, frozenset())

    def is_symmetric(self) -> bool:
        for g, row in self.non_conflict_sets.items():
            for h in row:
                if g not in self.non_conflict_sets.get(h, frozenset()):
                    return False
        return True


DEFAULT_TABLE = ConflictTable.default()


def conflicts(a: LaneGroup, b: LaneGroup, table: ConflictTable | None = None) -> bool:
    return (table or DEFAULT_TABLE).conflicts(a, b)


def assign_group(road: int, intention: int) -> LaneGroup:
    return LaneGroup(road, intention)

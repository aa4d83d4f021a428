# app/config.py
"""
Run configuration: one YAML document mapped onto frozen dataclasses.

Sections: schema, intersection, margins, classes, priorities, auction, qp, safety,
signals, arrivals, sim, experiment. Missing keys take defaults; unknown
keys raise ConfigError with the dotted key path.

Env (.env supported):
  COOPINTERSECT_CONFIG   default config path
  COOPINTERSECT_THREADS  max plan workers
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

import yaml
from dotenv import load_dotenv

from app.auction import AuctionParams
from app.errors import ConfigError
from app.geometry import IntersectionSpec
from app.opt.priorities import DEFAULT_PRIORITY_TABLE, PriorityBounds
from app.opt.problem import QpParams
from app.opt.safety import SafetyLayer
from app.sim.arrivals import ArrivalSpec
from app.vehicle import DEFAULT_CLASSES, SafetyMargins, VehicleClass

ROOT = Path(__file__).resolve().parents[1]
load_dotenv(ROOT / ".env")

SCHEMA_ID = "coopintersect/v1"
DEFAULT_CONFIG_PATH = Path(os.getenv("COOPINTERSECT_CONFIG", ROOT / "configs" / "default.yaml"))
RESULTS_DIR = ROOT / "results"

CONTROLLERS = ("coop", "stop_sign", "traffic_light", "actuated_light", "fifo_auction", "random_auction")
SECTIONS = (
    "schema", "intersection", "margins", "classes", "priorities", "auction",
    "qp", "safety", "signals", "arrivals", "sim", "experiment",
)


@dataclass(frozen=True)
class SignalParams:
    cycle: float = 60.0
    all_red: float = 4.0
    min_green: float = 10.0
    max_green: float = 80.0
    extension_headway: float = 3.0    # s of approach time that keeps an actuated green alive
    request_distance: float = 60.0    # m before the line where grants are decided
    stop_dwell: float = 1.0           # s standstill required at a stop sign
    reaction_time: float = 1.0        # s, car-following reaction time

    def __post_init__(self):
        if self.cycle <= 2 * self.all_red + 2 * self.min_green:
            raise ConfigError("cycle must exceed two all-reds plus two minimum greens", "signals.cycle")
        if self.max_green < self.min_green:
            raise ConfigError("max_green must be >= min_green", "signals.max_green")
        for name in ("all_red", "min_green", "extension_headway", "request_distance", "stop_dwell", "reaction_time"):
            if getattr(self, name) < 0:
                raise ConfigError("must be >= 0", f"signals.{name}")


@dataclass(frozen=True)
class SimParams:
    dt: float = 0.1
    duration: float = 600.0
    warmup: float = 120.0
    min_transit_speed: float = 2.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError(f"must be > 0, got {self.dt}", "sim.dt")
        if self.duration <= self.warmup or self.warmup < 0:
            raise ConfigError(f"need 0 <= warmup < duration, got {self.warmup}, {self.duration}", "sim.duration")
        if self.min_transit_speed <= 0:
            raise ConfigError("must be > 0", "sim.min_transit_speed")


@dataclass(frozen=True)
class Scenario:
    intersection: IntersectionSpec = field(default_factory=IntersectionSpec)
    margins: SafetyMargins = field(default_factory=SafetyMargins)
    classes: Mapping[str, VehicleClass] = field(default_factory=lambda: dict(DEFAULT_CLASSES))
    priorities: Mapping[str, PriorityBounds] = field(default_factory=lambda: dict(DEFAULT_PRIORITY_TABLE))
    auction: AuctionParams = field(default_factory=AuctionParams)
    qp: QpParams = field(default_factory=QpParams)
    safety: SafetyLayer = field(default_factory=SafetyLayer)
    signals: SignalParams = field(default_factory=SignalParams)
    arrivals: ArrivalSpec = field(default_factory=ArrivalSpec)
    sim: SimParams = field(default_factory=SimParams)

    def __post_init__(self):
        missing = sorted(set(self.classes) - set(self.priorities))
        if missing:
            raise ConfigError(f"classes without priority bounds: {missing}", "priorities")

    def with_flow(self, total: float, ratio: float = 1.0) -> "Scenario":
        return dataclasses.replace(self, arrivals=self.arrivals.with_total(total, ratio))

    def with_duration(self, duration: float, warmup: Optional[float] = None) -> "Scenario":
        w = self.sim.warmup if warmup is None else warmup
        return dataclasses.replace(self, sim=dataclasses.replace(self.sim, duration=duration, warmup=w))


@dataclass(frozen=True)
class ExperimentPlan:
    controllers: Tuple[str, ...] = CONTROLLERS[:5]
    flows: Tuple[float, ...] = tuple(float(f) for f in range(2000, 10001, 800))
    ratios: Tuple[float, ...] = (1.0,)
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    duration: float = 600.0
    warmup: float = 120.0

    def __post_init__(self):
        for name in ("controllers", "flows", "ratios", "seeds"):
            if not getattr(self, name):
                raise ConfigError("must not be empty", f"experiment.{name}")
        unknown = [c for c in self.controllers if c not in CONTROLLERS]
        if unknown:
            raise ConfigError(f"unknown controllers {unknown}, expected {CONTROLLERS}", "experiment.controllers")
        if any(f < 0 for f in self.flows):
            raise ConfigError("flows must be >= 0", "experiment.flows")
        if any(r <= 0 for r in self.ratios):
            raise ConfigError("ratios must be > 0", "experiment.ratios")
        if self.duration <= self.warmup:
            raise ConfigError(f"duration {self.duration} must exceed warmup {self.warmup}", "experiment.duration")


# ---- parsing helpers ----

def parse_ratio(value: Any) -> float:
    """'3:1' → 3.0; plain numbers pass through."""
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip()
    try:
        if ":" in text:
            a, b = text.split(":")
            return float(a) / float(b)
        return float(text)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"bad ratio {value!r}, expected 'H:V' or a number") from None


def parse_list(text: str, cast=float) -> Tuple:
    """Comma list; 'a..b:step' ranges are inclusive."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            span, _, step = part.partition(":")
            lo, hi = (float(x) for x in span.split(".."))
            step_v = float(step) if step else 1.0
            k = 0
            while lo + k * step_v <= hi + 1e-9:
                out.append(cast(lo + k * step_v))
                k += 1
        else:
            out.append(cast(part))
    return tuple(out)


def _tupled(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def _build(cls, raw: Any, path: str, **overrides):
    if raw is None:
        raw = {}
    if not isinstance(raw, Mapping):
        raise ConfigError(f"expected a mapping, got {type(raw).__name__}", path)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError("unknown key", f"{path}.{unknown[0]}")
    kwargs = {k: _tupled(v) for k, v in raw.items()}
    kwargs.update(overrides)
    for f in dataclasses.fields(cls):
        if f.name in kwargs and f.type in ("float", "int") and not isinstance(kwargs[f.name], (int, float)):
            raise ConfigError(f"expected a number, got {kwargs[f.name]!r}", f"{path}.{f.name}")
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), path) from exc


def _classes(raw: Any) -> Dict[str, VehicleClass]:
    if raw is None:
        return dict(DEFAULT_CLASSES)
    if not isinstance(raw, Mapping):
        raise ConfigError("expected a mapping of class name → parameters", "classes")
    out = dict(DEFAULT_CLASSES)
    for name, params in raw.items():
        out[name] = _build(VehicleClass, params, f"classes.{name}", name=name)
    return out


def _priorities(raw: Any) -> Dict[str, PriorityBounds]:
    if raw is None:
        return dict(DEFAULT_PRIORITY_TABLE)
    if not isinstance(raw, Mapping):
        raise ConfigError("expected a mapping of class name → bounds", "priorities")
    out = dict(DEFAULT_PRIORITY_TABLE)
    for name, params in raw.items():
        out[name] = _build(PriorityBounds, params, f"priorities.{name}")
    return out


def _arrivals(raw: Any) -> ArrivalSpec:
    raw = dict(raw or {})
    if isinstance(raw.get("class_mix"), Mapping):
        raw["class_mix"] = tuple(raw["class_mix"].items())
    return _build(ArrivalSpec, raw, "arrivals")


def _experiment(raw: Any, sim: SimParams) -> ExperimentPlan:
    raw = dict(raw or {})
    raw.setdefault("duration", sim.duration)
    raw.setdefault("warmup", sim.warmup)
    if "ratios" in raw:
        raw["ratios"] = [parse_ratio(r) for r in raw["ratios"]]
    if "flows" in raw:
        raw["flows"] = [float(f) for f in raw["flows"]]
    return _build(ExperimentPlan, raw, "experiment")


def scenario_from_dict(doc: Mapping[str, Any]) -> Tuple[Scenario, ExperimentPlan]:
    if not isinstance(doc, Mapping):
        raise ConfigError("config must be a mapping at the top level")
    unknown = sorted(set(doc) - set(SECTIONS))
    if unknown:
        raise ConfigError("unknown section", unknown[0])
    schema = doc.get("schema", SCHEMA_ID)
    if schema != SCHEMA_ID:
        raise ConfigError(f"unsupported schema {schema!r}, expected {SCHEMA_ID!r}", "schema")

    sim = _build(SimParams, doc.get("sim"), "sim")
    plan = _experiment(doc.get("experiment"), sim)
    sim = dataclasses.replace(sim, duration=plan.duration, warmup=plan.warmup)
    scenario = Scenario(
        intersection=_build(IntersectionSpec, doc.get("intersection"), "intersection"),
        margins=_build(SafetyMargins, doc.get("margins"), "margins"),
        classes=_classes(doc.get("classes")),
        priorities=_priorities(doc.get("priorities")),
        auction=_build(AuctionParams, doc.get("auction"), "auction"),
        qp=_build(QpParams, doc.get("qp"), "qp"),
        safety=_build(SafetyLayer, doc.get("safety"), "safety"),
        signals=_build(SignalParams, doc.get("signals"), "signals"),
        arrivals=_arrivals(doc.get("arrivals")),
        sim=sim,
    )
    return scenario, plan


def load_config(path: Optional[Path] = None) -> Tuple[Scenario, ExperimentPlan]:
    path = Path(path or DEFAULT_CONFIG_PATH)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with path.open("r", encoding="utf-8") as f:
        try:
            doc = yaml.safe_load(f) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    return scenario_from_dict(doc)


def max_workers() -> int:
    raw = os.getenv("COOPINTERSECT_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ConfigError(f"COOPINTERSECT_THREADS must be an integer, got {raw!r}") from None
    return os.cpu_count() or 1

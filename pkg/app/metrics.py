# app/metrics.py
"""
Run metrics from the simulator's event stream.

Fuel is a surrogate polynomial (idle floor + rolling + acceleration work);
only ratios between controllers are meaningful.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import numpy as np
import pandas as pd

from app.errors import TruncatedLogError
from app.vehicle import VehicleClass

BETA0 = 1.0e-4
BETA1 = 2.5e-5
BETA2 = 1.0e-4
BETA_IDLE = 1.5e-4
CO2_PER_LITER = 2.3

METRICS_COLUMNS: List[str] = [
    "run_id", "controller", "flow_total", "flow_ratio", "seed",
    "throughput", "ttg_mean", "ttg_ev", "fuel_total", "fuel_truck", "co2_total",
    "collisions", "plan_ms_p50", "plan_ms_p99",
]


def fuel_rate(v: float, a: float, vclass: VehicleClass) -> float:
    """Liters per second."""
    base = BETA0 + BETA1 * v + BETA2 * v * max(a, 0.0)
    return vclass.fuel_scale * max(base, BETA_IDLE)


@dataclass
class RunMetrics:
    throughput: float = 0.0        # departures per minute
    mean_time_to_goal: float = 0.0
    ev_time_to_goal: float = 0.0
    total_fuel: float = 0.0
    truck_fuel: float = 0.0
    total_co2: float = 0.0
    collisions: int = 0
    departures: int = 0
    plan_ms_p50: float = 0.0
    plan_ms_p99: float = 0.0

    def as_row(self) -> Dict[str, float]:
        return {
            "throughput": self.throughput,
            "ttg_mean": self.mean_time_to_goal,
            "ttg_ev": self.ev_time_to_goal,
            "fuel_total": self.total_fuel,
            "fuel_truck": self.truck_fuel,
            "co2_total": self.total_co2,
            "collisions": self.collisions,
            "plan_ms_p50": self.plan_ms_p50,
            "plan_ms_p99": self.plan_ms_p99,
        }


def aggregate(events: Sequence[Dict]) -> RunMetrics:
    """
    Departures after warmup count toward throughput and time-to-goal;
    fuel is everything burned after warmup, departed or still in the system.
    """
    if not events:
        return RunMetrics()
    end = events[-1]
    if end.get("kind") != "end":
        raise TruncatedLogError(f"event log ends with {end.get('kind')!r}, expected 'end'")
    warmup = float(end.get("warmup", 0.0))
    duration = float(end.get("duration", 0.0))

    deps = [e for e in events if e["kind"] == "depart"]
    measured = [e for e in deps if e["t"] >= warmup]
    window_min = (duration - warmup) / 60.0
    ttg = [e["ttg"] for e in measured]
    ttg_ev = [e["ttg"] for e in measured if e["class"] == "emergency"]
    fuel = sum(e["fuel"] for e in deps) + float(end.get("fuel_residual", 0.0))
    fuel_truck = sum(e["fuel"] for e in deps if e["class"] == "truck") + float(end.get("fuel_residual_truck", 0.0))
    plan_ms = [e["plan_ms"] for e in events if e["kind"] == "cycle" and e["t"] >= warmup]

    return RunMetrics(
        throughput=len(measured) / window_min if window_min > 0 else 0.0,
        mean_time_to_goal=float(np.mean(ttg)) if ttg else 0.0,
        ev_time_to_goal=float(np.mean(ttg_ev)) if ttg_ev else 0.0,
        total_fuel=fuel,
        truck_fuel=fuel_truck,
        total_co2=CO2_PER_LITER * fuel,
        collisions=sum(1 for e in events if e["kind"] == "collision"),
        departures=len(measured),
        plan_ms_p50=float(np.percentile(plan_ms, 50)) if plan_ms else 0.0,
        plan_ms_p99=float(np.percentile(plan_ms, 99)) if plan_ms else 0.0,
    )


def write_events(events: Iterable[Dict], path: Path) -> Path:
    """Gzip JSON lines, one event per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(list(events)).to_json(path, orient="records", lines=True, compression={"method": "gzip", "mtime": 0})
    return path


def read_events(path: Path) -> List[Dict]:
    frame = pd.read_json(path, orient="records", lines=True, compression={"method": "gzip", "mtime": 0})
    return [{k: v for k, v in rec.items() if not (isinstance(v, float) and np.isnan(v))} for rec in frame.to_dict("records")]

# app/run_plan.py
"""
Batch experiment runner: sweep controllers × flows × ratios × seeds.

Usage:
  python -m app.run_plan --config configs/default.yaml --out results/
  python -m app.run_plan --controllers coop,traffic_light --flows 5200 \
      --ratios 1:1,2:1,3:1,4:1 --seeds 0..4 --duration 600

Outputs under --out:
  metrics.csv   one row per cell, sorted by (controller, flow, ratio, seed)
  summary.csv   per-controller means and ratios vs traffic_light
  events/       per-run gzip JSON lines (only with --emit-events)

Exit code 1 if any coop run records a collision.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd
from tqdm import tqdm

from app.config import (
    CONTROLLERS,
    RESULTS_DIR,
    ExperimentPlan,
    Scenario,
    load_config,
    max_workers,
    parse_list,
    parse_ratio,
)
from app.errors import CoopIntersectError
from app.metrics import METRICS_COLUMNS, aggregate, write_events
from app.sim.runner import simulate

SUMMARY_METRICS = ["throughput", "ttg_mean", "ttg_ev", "fuel_total", "fuel_truck", "co2_total", "collisions"]
REFERENCE = "traffic_light"


@dataclass(frozen=True, order=True)
class Cell:
    controller: str
    flow_total: float
    flow_ratio: float
    seed: int

    @property
    def run_id(self) -> str:
        return f"{self.controller}-f{self.flow_total:g}-r{self.flow_ratio:g}-s{self.seed}"


def expand_cells(plan: ExperimentPlan) -> List[Cell]:
    return sorted(
        Cell(c, float(f), float(r), int(s))
        for c in plan.controllers for f in plan.flows for r in plan.ratios for s in plan.seeds
    )


def run_cell(cell: Cell, scenario: Scenario, events_dir: Optional[Path] = None, timing: bool = True) -> Dict:
    scn = scenario.with_flow(cell.flow_total, cell.flow_ratio)
    events = simulate(cell.controller, scn, cell.seed)
    if events_dir is not None:
        write_events(events, events_dir / f"{cell.run_id}.jsonl.gz")
    m = aggregate(events)
    row = {
        "run_id": cell.run_id,
        "controller": cell.controller,
        "flow_total": cell.flow_total,
        "flow_ratio": cell.flow_ratio,
        "seed": cell.seed,
        **m.as_row(),
    }
    if not timing:
        row["plan_ms_p50"] = row["plan_ms_p99"] = 0.0
    return row


def summarize(frame: pd.DataFrame) -> pd.DataFrame:
    """Seed means per (controller, flow, ratio) plus ratios vs traffic_light at the same flow/ratio."""
    if frame.empty:
        return pd.DataFrame()
    means = frame.groupby(["controller", "flow_total", "flow_ratio"], as_index=False)[SUMMARY_METRICS].mean()
    ratio_cols = ["throughput", "ttg_mean", "fuel_total"]
    ref = means.loc[means["controller"] == REFERENCE, ["flow_total", "flow_ratio", *ratio_cols]]
    ref = ref.rename(columns={c: f"{c}_tl" for c in ratio_cols})
    means = means.merge(ref, on=["flow_total", "flow_ratio"], how="left")
    for col in ratio_cols:
        means[f"{col}_vs_tl"] = means[col] / means[f"{col}_tl"]
    means = means.drop(columns=[f"{c}_tl" for c in ratio_cols])
    return means.sort_values(["controller", "flow_total", "flow_ratio"]).reset_index(drop=True)


def _write_atomic(frame: pd.DataFrame, path: Path) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    frame.to_csv(tmp, index=False, float_format="%.6g")
    os.replace(tmp, path)


def run_plan(
    plan: ExperimentPlan,
    scenario: Scenario,
    out_dir: Path,
    emit_events: bool = False,
    timing: bool = True,
    workers: Optional[int] = None,
) -> pd.DataFrame:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenario = scenario.with_duration(plan.duration, plan.warmup)
    events_dir = out_dir / "events" if emit_events else None
    cells = expand_cells(plan)
    workers = workers or min(max_workers(), len(cells))

    rows: List[Dict] = []
    if workers <= 1:
        for cell in tqdm(cells, desc="Cells"):
            rows.append(run_cell(cell, scenario, events_dir, timing))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_cell, c, scenario, events_dir, timing) for c in cells]
            for fut in tqdm(as_completed(futures), total=len(futures), desc="Cells"):
                rows.append(fut.result())

    order = {c.run_id: k for k, c in enumerate(cells)}
    frame = pd.DataFrame(sorted(rows, key=lambda r: order[r["run_id"]]), columns=METRICS_COLUMNS)
    summary = summarize(frame)
    _write_atomic(frame, out_dir / "metrics.csv")
    _write_atomic(summary, out_dir / "summary.csv")
    return summary


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(description="Sweep intersection controllers over flows, ratios and seeds.")
    ap.add_argument("--config", type=Path, default=None, help="YAML run configuration")
    ap.add_argument("--out", type=Path, default=RESULTS_DIR, help="output directory")
    ap.add_argument("--seeds", help="e.g. 0,1,2 or 0..4")
    ap.add_argument("--controllers", help=f"comma list from {','.join(CONTROLLERS)}")
    ap.add_argument("--flows", help="veh/h totals, e.g. 2000..10000:800")
    ap.add_argument("--ratios", help="axis A:B ratios, e.g. 1:1,2:1")
    ap.add_argument("--duration", type=float, help="simulated seconds per run")
    ap.add_argument("--emit-events", action="store_true", help="write per-run event logs")
    ap.add_argument("--no-timing", action="store_true", help="zero wall-clock columns for byte-stable CSVs")
    return ap


def plan_from_args(args: argparse.Namespace, plan: ExperimentPlan) -> ExperimentPlan:
    updates = {}
    if args.seeds:
        updates["seeds"] = parse_list(args.seeds, int)
    if args.controllers:
        updates["controllers"] = tuple(c.strip() for c in args.controllers.split(",") if c.strip())
    if args.flows:
        updates["flows"] = parse_list(args.flows, float)
    if args.ratios:
        updates["ratios"] = tuple(parse_ratio(r) for r in args.ratios.split(",") if r.strip())
    if args.duration is not None:
        updates["duration"] = args.duration
    return dataclasses.replace(plan, **updates)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scenario, plan = load_config(args.config)
        plan = plan_from_args(args, plan)
    except CoopIntersectError as exc:
        raise SystemExit(f"❌ {exc}")

    n_cells = len(plan.controllers) * len(plan.flows) * len(plan.ratios) * len(plan.seeds)
    print(f"Running {n_cells} cells ({plan.duration:g}s each) → {args.out}")
    summary = run_plan(plan, scenario, args.out, emit_events=args.emit_events, timing=not args.no_timing)
    print(f"✅ Wrote {args.out / 'metrics.csv'}")
    print(f"✅ Wrote {args.out / 'summary.csv'}")

    coop = summary[summary["controller"] == "coop"] if not summary.empty else summary
    if not coop.empty and (coop["collisions"] > 0).any():
        print("❌ coop runs recorded collisions")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

import dataclasses
import math

import pandas as pd
import pytest
import yaml

from app.config import ExperimentPlan, Scenario
from app.metrics import METRICS_COLUMNS, read_events
from app.run_plan import Cell, expand_cells, main, run_plan, summarize

TINY = ExperimentPlan(
    controllers=("traffic_light", "stop_sign"),
    flows=(1600.0,),
    ratios=(1.0,),
    seeds=(0, 1),
    duration=20.0,
    warmup=5.0,
)


def test_expand_cells_is_full_product_and_sorted():
    plan = dataclasses.replace(TINY, flows=(3000.0, 1600.0), ratios=(2.0, 1.0))
    cells = expand_cells(plan)
    assert len(cells) == 2 * 2 * 2 * 2
    assert cells == sorted(cells)
    assert cells[0] == Cell("stop_sign", 1600.0, 1.0, 0)


def test_run_id_format():
    assert Cell("coop", 5200.0, 3.0, 4).run_id == "coop-f5200-r3-s4"
    assert Cell("traffic_light", 2000.0, 0.5, 0).run_id == "traffic_light-f2000-r0.5-s0"


def _row(controller, throughput, ttg, fuel, seed=0):
    return {
        "run_id": f"{controller}-{seed}", "controller": controller, "flow_total": 2000.0, "flow_ratio": 1.0,
        "seed": seed, "throughput": throughput, "ttg_mean": ttg, "ttg_ev": 0.0, "fuel_total": fuel,
        "fuel_truck": 0.0, "co2_total": 2.3 * fuel, "collisions": 0, "plan_ms_p50": 0.0, "plan_ms_p99": 0.0,
    }


def test_summarize_ratios_against_traffic_light():
    frame = pd.DataFrame([
        _row("traffic_light", 100.0, 40.0, 10.0, seed=0),
        _row("traffic_light", 120.0, 20.0, 10.0, seed=1),
        _row("coop", 165.0, 15.0, 5.5),
    ], columns=METRICS_COLUMNS)
    summary = summarize(frame).set_index("controller")
    assert summary.loc["traffic_light", "throughput"] == pytest.approx(110.0)
    assert summary.loc["traffic_light", "throughput_vs_tl"] == pytest.approx(1.0)
    assert summary.loc["coop", "throughput_vs_tl"] == pytest.approx(1.5)
    assert summary.loc["coop", "ttg_mean_vs_tl"] == pytest.approx(0.5)
    assert summary.loc["coop", "fuel_total_vs_tl"] == pytest.approx(0.55)


def test_summarize_without_reference_leaves_nan():
    summary = summarize(pd.DataFrame([_row("coop", 10.0, 1.0, 1.0)], columns=METRICS_COLUMNS))
    assert math.isnan(summary.loc[0, "throughput_vs_tl"])
    assert summarize(pd.DataFrame(columns=METRICS_COLUMNS)).empty


def test_run_plan_writes_sorted_metrics_and_events(tmp_path):
    run_plan(TINY, Scenario(), tmp_path, emit_events=True, timing=False, workers=1)
    metrics = pd.read_csv(tmp_path / "metrics.csv")
    assert list(metrics.columns) == METRICS_COLUMNS
    assert list(metrics["run_id"]) == [c.run_id for c in expand_cells(TINY)]
    assert (metrics["collisions"] == 0).all()
    assert (metrics["plan_ms_p50"] == 0).all()

    summary = pd.read_csv(tmp_path / "summary.csv")
    assert set(summary["controller"]) == {"stop_sign", "traffic_light"}

    for cell in expand_cells(TINY):
        events = read_events(tmp_path / "events" / f"{cell.run_id}.jsonl.gz")
        assert events[-1]["kind"] == "end"
        assert events[-1]["duration"] == pytest.approx(20.0)
    assert not list(tmp_path.glob("*.tmp"))


def test_run_plan_reruns_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    plan = dataclasses.replace(TINY, controllers=("traffic_light",), seeds=(3,))
    for out in (a, b):
        run_plan(plan, Scenario(), out, emit_events=True, timing=False, workers=1)
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    assert (a / "summary.csv").read_bytes() == (b / "summary.csv").read_bytes()
    name = "events/traffic_light-f1600-r1-s3.jsonl.gz"
    assert (a / name).read_bytes() == (b / name).read_bytes()


def _write_config(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump({
        "schema": "coopintersect/v1",
        "experiment": {
            "controllers": ["traffic_light"],
            "flows": [1000],
            "ratios": ["1:1"],
            "seeds": [0],
            "duration": 30.0,
            "warmup": 5.0,
        },
    }), encoding="utf-8")
    return path


def test_main_runs_a_config(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("COOPINTERSECT_THREADS", "1")
    out = tmp_path / "out"
    code = main(["--config", str(_write_config(tmp_path)), "--out", str(out), "--duration", "15", "--no-timing"])
    assert code == 0
    assert "✅" in capsys.readouterr().out
    metrics = pd.read_csv(out / "metrics.csv")
    assert list(metrics["run_id"]) == ["traffic_light-f1000-r1-s0"]


def test_main_overrides_from_flags(tmp_path, monkeypatch):
    monkeypatch.setenv("COOPINTERSECT_THREADS", "1")
    out = tmp_path / "out"
    args = ["--config", str(_write_config(tmp_path)), "--out", str(out),
            "--controllers", "stop_sign", "--seeds", "0..1", "--ratios", "2:1", "--no-timing"]
    assert main(args) == 0
    metrics = pd.read_csv(out / "metrics.csv")
    assert list(metrics["run_id"]) == ["stop_sign-f1000-r2-s0", "stop_sign-f1000-r2-s1"]


@pytest.mark.parametrize("extra", [["--controllers", "roundabout"], ["--ratios", "1:0"], ["--duration", "2"]])
def test_main_rejects_bad_input(tmp_path, extra):
    with pytest.raises(SystemExit) as err:
        main(["--config", str(_write_config(tmp_path)), "--out", str(tmp_path / "out"), *extra])
    assert "❌" in str(err.value.code)


def test_main_rejects_unknown_config_key(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("qp:\n  lamda: 0.5\n", encoding="utf-8")
    with pytest.raises(SystemExit) as err:
        main(["--config", str(path)])
    assert "qp.lamda" in str(err.value.code)

# tests/conftest.py
import dataclasses
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from app.config import Scenario, SimParams
from app.geometry import LaneGroup
from app.sim.arrivals import ArrivalSpec
from app.vehicle import DEFAULT_CLASSES, PASSENGER, VehicleState

settings.register_profile("quick", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("standard", max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "quick"))


def make_vehicle(
    vid, s, v, road=0, intention=1, vclass=PASSENGER, preference=0.5, wait=0.0, spawn_time=0.0,
):
    # lane = intention with the default three lanes
    return VehicleState(
        id=vid, s=float(s), v=float(v), lane=intention, wait_time=float(wait),
        vclass=vclass, preference=float(preference), group=LaneGroup(road, intention),
        spawn_time=float(spawn_time),
    )


def random_states(rng, n):
    """Random control-zone vehicles; same-lane vehicles may overlap."""
    classes = list(DEFAULT_CLASSES.values())
    out = []
    for k in range(n):
        out.append(make_vehicle(
            k, rng.uniform(5, 150), rng.uniform(0, 20),
            road=int(rng.integers(4)), intention=int(rng.integers(3)),
            vclass=classes[int(rng.integers(len(classes)))],
            preference=rng.uniform(), wait=rng.uniform(0, 30),
        ))
    return out


def spaced_states(rng, n, max_speed=3.5):
    """Round-robin over the 12 lanes, 35 m apart, slow enough that braking to 0 is always reachable."""
    classes = list(DEFAULT_CLASSES.values())
    out = []
    for k in range(n):
        lane_key, slot = k % 12, k // 12
        out.append(make_vehicle(
            k, 12.0 + 35.0 * slot + rng.uniform(0, 3), rng.uniform(0, max_speed),
            road=lane_key // 3, intention=lane_key % 3,
            vclass=classes[int(rng.integers(len(classes)))],
            preference=rng.uniform(), wait=rng.uniform(0, 30),
        ))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def short_scenario():
    """Default scenario cut to 30 s with a 5 s warmup."""
    return dataclasses.replace(Scenario(), sim=SimParams(duration=30.0, warmup=5.0))


@pytest.fixture
def quiet_scenario():
    """No arrivals at all."""
    return dataclasses.replace(
        Scenario(),
        arrivals=ArrivalSpec(flows=(0.0, 0.0, 0.0, 0.0)),
        sim=SimParams(duration=30.0, warmup=0.0),
    )


def axis_points(lo, hi, step):
    return np.union1d(np.arange(lo, hi + 1e-9, step), [hi])


def grid_oracle(problem, free, step=0.01):
    """
    Grid over every coordinate except `free`; the free coordinate takes its
    exact best value inside the interval the rows leave open.
    """
    n = problem.n
    others = [k for k in range(n) if k != free]
    axes = [axis_points(problem.lo[k], problem.hi[k], step) for k in others]
    if others:
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(others))
    else:
        grid = np.zeros((1, 0))
    rhs = problem.b[:, None] - problem.A[:, others] @ grid.T
    coef = problem.A[:, free]
    lower = np.full(len(grid), problem.lo[free])
    upper = np.full(len(grid), problem.hi[free])
    ok = np.ones(len(grid), dtype=bool)
    for r, a in enumerate(coef):
        if a > 1e-12:
            upper = np.minimum(upper, rhs[r] / a)
        elif a < -1e-12:
            lower = np.maximum(lower, rhs[r] / a)
        else:
            ok &= rhs[r] >= -1e-9
    ok &= lower <= upper + 1e-9
    pts = np.empty((len(grid), n))
    pts[:, others] = grid
    pts[:, free] = np.clip(problem.target[free], lower, np.maximum(lower, upper))
    obj = np.sum(problem.w_speed * (pts - problem.speed_limit) ** 2 + problem.w_var * (pts - problem.v) ** 2, axis=1)
    obj[~ok] = np.inf
    return float(obj.min())

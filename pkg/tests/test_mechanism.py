from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from app import check_mechanism
from app.errors import MechanismError
from app.geometry import LaneGroup
from app.mechanism import (
    AuctionInstance,
    allocation,
    check_incentive_compatibility,
    check_welfare_maximization,
    conflict_partitions,
    crossing_time_alphas,
    deviation_grid,
    load_instances,
    overbid_delta,
    overflow_bound,
    random_instance,
    report,
    utility,
    with_overflow,
)

FIXTURES = Path(__file__).parent / "fixtures" / "instances.yaml"


def _g(label):
    return LaneGroup.parse(label)


# ---- utility ----

def test_utility_top_slot():
    inst = AuctionInstance((10, 4), (1.0, 0.5))
    assert utility(inst, [10, 4], 0) == pytest.approx(8.0)


def test_utility_single_agent_pays_nothing():
    assert utility(AuctionInstance((5,), (1.0,)), [5], 0) == pytest.approx(5.0)


def test_utility_middle_slot_telescopes():
    inst = AuctionInstance((10, 4, 1), (1.0, 0.5, 0.2))
    assert utility(inst, [10, 4, 1], 1) == pytest.approx(1.7)


def test_utility_without_slot_is_zero():
    inst = AuctionInstance((10, 4, 1), (1.0, 0.5))
    assert utility(inst, [10, 4, 1], 2) == 0.0


def test_first_price_utility():
    inst = AuctionInstance((10, 4), (1.0, 0.5))
    assert utility(inst, [6, 4], 0, payment_rule="first_price") == pytest.approx(4.0)


def test_report_welfare_matches_terms():
    inst = AuctionInstance((10, 4, 1), (1.0, 0.5, 0.2))
    rep = report(inst, [10, 4, 1])
    assert rep.order == (0, 1, 2)
    assert rep.welfare == pytest.approx(10 + 2 + 0.2)


def test_allocation_ties_by_index():
    assert allocation([3.0, 5.0, 3.0]) == (1, 0, 2)


@pytest.mark.parametrize("kwargs", [
    dict(valuations=(1, 0), alphas=(1.0, 0.5)),
    dict(valuations=(1, 2), alphas=(0.5, 0.5)),
    dict(valuations=(1, 2), alphas=(1.0, 0.5), lane_of=(0,)),
])
def test_instance_validation(kwargs):
    with pytest.raises(MechanismError):
        AuctionInstance(**kwargs)


def test_utility_rejects_unknown_rule():
    with pytest.raises(MechanismError):
        utility(AuctionInstance((1,), (1.0,)), [1], 0, payment_rule="vickrey")


@given(seed=st.integers(0, 10_000), n=st.integers(1, 6))
def test_utility_invariant_under_relabeling(seed, n):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, n)
    perm = rng.permutation(n)
    relabeled = AuctionInstance(tuple(inst.valuations[p] for p in perm), inst.alphas)
    for k, p in enumerate(perm):
        assert utility(relabeled, list(relabeled.valuations), k) == pytest.approx(
            utility(inst, list(inst.valuations), int(p)), abs=1e-9
        )


# ---- incentive compatibility ----

def test_deviation_grid_contains_opponent_bids_and_truth():
    inst = AuctionInstance((10, 4.25), (1.0, 0.5))
    grid = deviation_grid(inst, 0, 0.5)
    assert grid.min() == 0.0 and grid.max() == pytest.approx(20.0)
    for point in (4.25, 4.25 - 1e-6, 4.25 + 1e-6, 10.0):
        assert np.isclose(grid, point, atol=1e-12).any()


def test_truthful_ssa_is_ic_on_small_example():
    rep = check_incentive_compatibility(AuctionInstance((10, 4), (1.0, 0.5)), 0.1)
    assert rep.ok and rep.checked > 0


def test_first_price_is_manipulable():
    rep = check_incentive_compatibility(AuctionInstance((10, 4), (1.0, 0.5)), 0.1, payment_rule="first_price")
    assert not rep.ok
    assert any(d.bid < 10 for d in rep.violations)


def test_single_agent_is_trivially_ic():
    assert check_incentive_compatibility(AuctionInstance((3.0,), (1.0,))).ok


@pytest.mark.parametrize("seed", range(30))
def test_truthful_ssa_is_ic_on_random_instances(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, int(rng.integers(1, 6)), with_groups=bool(seed % 2))
    rep = check_incentive_compatibility(inst, 0.1)
    assert rep.ok, rep.violations[:3]


def test_fewer_slots_than_agents_stays_ic(rng):
    inst = random_instance(rng, 5, n_slots=3)
    assert check_incentive_compatibility(inst, 0.2).ok


# ---- welfare ----

def test_welfare_two_agents():
    rep = check_welfare_maximization(AuctionInstance((10, 4), (1.0, 0.5)))
    assert rep.ssa_welfare == pytest.approx(12.0)
    assert rep.ok


def test_welfare_with_equal_valuations():
    assert check_welfare_maximization(AuctionInstance((3, 3, 3), (1.0, 0.6, 0.2))).ok


def test_welfare_sums_over_independent_groups():
    groups = tuple(_g(x) for x in ("0-0", "0-0", "1-0", "1-0", "2-0", "2-0"))
    inst = AuctionInstance((7, 3, 9, 2, 6, 4), (1.0, 0.8, 0.6, 0.4, 0.3, 0.2), groups=groups)
    rep = check_welfare_maximization(inst)
    assert len(rep.partition_welfare) == 3
    assert rep.ssa_welfare == pytest.approx((7 + 2.4) + (9 + 1.6) + (6 + 3.2))
    assert rep.ok


@pytest.mark.parametrize("seed", range(30))
def test_welfare_matches_brute_force(seed):
    rng = np.random.default_rng(100 + seed)
    inst = random_instance(rng, int(rng.integers(1, 7)), with_groups=bool(seed % 2))
    assert check_welfare_maximization(inst).ok


def test_conflict_partitions():
    assert conflict_partitions([_g("0-1"), _g("2-2")]) == [[0], [1]]
    assert conflict_partitions([_g("0-1"), _g("1-2")]) == [[0, 1]]
    assert conflict_partitions([_g("0-1"), _g("0-1"), _g("1-0")]) == [[0, 1], [2]]
    # 0-1 and 0-2 never conflict but share road 0 lane 1 here
    assert conflict_partitions([_g("0-1"), _g("0-2")], lane_of=[1, 1]) == [[0, 1]]
    assert conflict_partitions(None) == []


# ---- overflow ----

def test_overflow_bound_example():
    inst = AuctionInstance((10, 6, 2), (1.0, 0.5, 1 / 3))
    assert overflow_bound(inst, 1, 1) == pytest.approx(2.0)
    assert overflow_bound(inst, 1, 0) == 0.0


def test_overflow_bound_two_slot_jump():
    inst = AuctionInstance((10, 6, 2), (1.0, 0.5, 1 / 3))
    expected = 10 * (1 - 1 / 3) - (6 * 0.5 + 2 * (0.5 - 1 / 3))
    assert overflow_bound(inst, 1, 2) == pytest.approx(expected)


def test_overflow_bound_rejects_undefined_slot():
    inst = AuctionInstance((10, 6, 2), (1.0, 0.5, 1 / 3))
    with pytest.raises(MechanismError):
        overflow_bound(inst, 2, 2)
    with pytest.raises(MechanismError):
        overflow_bound(inst, 0, 1)


def test_transfer_of_one_keeps_truthful_bidding_optimal():
    inst = with_overflow(AuctionInstance((10, 6, 2), (1.0, 0.5, 1 / 3)), 1, 1, 1.0)
    assert utility(inst, [10, 6, 2], 0) == pytest.approx(10 - 3 - 1 / 3 - 1.0)
    assert check_incentive_compatibility(inst, 0.1).ok


def test_transfer_of_three_makes_dropping_behind_the_blocker_pay():
    inst = with_overflow(AuctionInstance((10, 6, 2), (1.0, 0.5, 1 / 3)), 1, 1, 3.0)
    rep = check_incentive_compatibility(inst, 0.1)
    assert not rep.ok
    assert {d.agent for d in rep.violations} == {0}
    # any bid landing in slot 2 beats keeping slot 1 by a full α_1
    assert all(2 <= d.bid < 6 for d in rep.violations)
    assert max(d.deviating_utility - d.truthful_utility for d in rep.violations) == pytest.approx(1.0)


def test_transfer_is_charged_only_ahead_of_a_blocker():
    inst = with_overflow(AuctionInstance((10, 6, 2), (1.0, 0.5, 1 / 3)), 1, 2, 0.5)
    plain = AuctionInstance((10, 6, 2), (1.0, 0.5, 1 / 3))
    # between the two blockers still pays, behind both does not
    assert utility(inst, [4, 6, 2], 0) == pytest.approx(utility(plain, [4, 6, 2], 0) - 0.5)
    assert utility(inst, [1, 6, 2], 0) == pytest.approx(utility(plain, [1, 6, 2], 0))
    assert utility(inst, [10, 6, 2], 1) == pytest.approx(utility(plain, [10, 6, 2], 1))


def test_overflow_instances_need_slot_order_and_a_blocker():
    inst = AuctionInstance((10, 6, 2), (1.0, 0.5, 1 / 3))
    with pytest.raises(MechanismError):
        with_overflow(AuctionInstance((2, 6, 10), inst.alphas), 1, 1, 1.0)
    with pytest.raises(MechanismError):
        with_overflow(inst, 1, 0, 1.0)
    with pytest.raises(MechanismError):
        with_overflow(inst, 1, 1, -1.0)


def test_overflow_survives_partitioning():
    groups = tuple(_g(x) for x in ("0-1", "0-1", "2-2"))
    inst = with_overflow(AuctionInstance((10, 6, 2), (1.0, 0.5, 1 / 3), groups=groups), 1, 1, 3.0)
    assert inst.subset([0, 1]).overflow.blockers == (1,)
    assert inst.subset([0, 2]).overflow is None
    assert not check_incentive_compatibility(inst, 0.1).ok


@pytest.mark.parametrize("seed", range(60))
def test_grid_search_agrees_with_the_overflow_bound(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    inst = random_instance(rng, n)
    ordered = AuctionInstance(sorted(inst.valuations, reverse=True), inst.alphas)
    if len(set(ordered.valuations)) < n:
        return
    i = int(rng.integers(1, n))
    m = int(rng.integers(1, n - i + 1))
    bound = overflow_bound(ordered, i, m)
    assert bound > 0
    assert check_incentive_compatibility(with_overflow(ordered, i, m, 0.9 * bound), 0.1).ok
    outside = check_incentive_compatibility(with_overflow(ordered, i, m, 1.1 * bound), 0.1)
    assert {d.agent for d in outside.violations} == {i - 1}
    assert check_mechanism.transfer_respects_bound(ordered, i, m, bound, 0.1)


# ---- over-bidding ----

def test_overbid_delta_examples():
    assert overbid_delta(8, 5, 2, 4) == pytest.approx(0.75)
    assert overbid_delta(5, 5, 2, 4) == 0.0
    assert overbid_delta(3, 5, 2, 4) == pytest.approx(-0.5)


@pytest.mark.parametrize("args", [(1, 1, 0, 2), (1, 1, -1, 2), (1, 1, 3, 2), (1, 1, 2, 2)])
def test_overbid_delta_rejects_bad_times(args):
    with pytest.raises(MechanismError):
        overbid_delta(*args)


def test_overbid_sign_law_on_random_tuples():
    rng = np.random.default_rng(7)
    v, b = rng.uniform(0, 10, (2, 10_000))
    t_prev = rng.uniform(0.1, 10, 10_000)
    t_k = t_prev + rng.uniform(0.01, 10, 10_000)
    d = np.array([overbid_delta(*row) for row in zip(v, b, t_prev, t_k)])
    assert (np.sign(d) == np.sign(v - b)).all()


def test_crossing_time_alphas():
    alphas = crossing_time_alphas([0.0, 10.0, 100.0], 20.0, 1.5)
    assert alphas == pytest.approx((1 / 1.5, 1 / 3.0, 1 / 6.5))
    with pytest.raises(MechanismError):
        crossing_time_alphas([1.0], 20.0, 0.0)


# ---- fixtures and CLI ----

def test_load_instances_from_fixture():
    instances = load_instances(FIXTURES)
    assert len(instances) == 6
    assert instances[4].groups[2] == _g("1-0")
    assert instances[5].lane_of == (1, 2, 1, 2)
    for inst in instances:
        assert check_incentive_compatibility(inst, 0.1).ok
        assert check_welfare_maximization(inst).ok


def test_load_instances_rejects_incomplete_entries(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("- valuations: [1, 2]\n", encoding="utf-8")
    with pytest.raises(MechanismError):
        load_instances(path)


def test_check_mechanism_cli_writes_report(tmp_path, capsys):
    out = tmp_path / "mechanism.csv"
    code = check_mechanism.main(["--instances", "6", "--max-agents", "4", "--resolution", "0.5", "--out", str(out)])
    assert code == 0
    frame = pd.read_csv(out)
    assert len(frame) == 6
    assert frame["ic_violations"].sum() == 0
    assert frame["welfare_ok"].all()
    assert "IC violations: 0" in capsys.readouterr().out


def test_check_mechanism_cli_reads_fixtures(tmp_path):
    out = tmp_path / "fixtures.csv"
    assert check_mechanism.main(["--fixtures", str(FIXTURES), "--resolution", "0.5", "--out", str(out)]) == 0
    assert len(pd.read_csv(out)) == 6

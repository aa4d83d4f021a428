# app/sim/following.py
"""
Speed caps used when vehicles follow something: the safe-speed rule for
signal/stop baselines and the entry-speed cap that keeps a newly spawned
vehicle's gap row satisfiable.
"""

from __future__ import annotations

import math


def safe_speed(gap: float, v_leader: float, b_follower: float, b_leader: float, reaction: float) -> float:
    """
    Largest v with  v·τ + v²/(2B_f) ≤ gap + v_L²/(2B_L): the follower can
    stop behind a leader braking at its own limit. `gap` is the clear
    distance after margins; decelerations are positive magnitudes.
    """
    b_f = abs(b_follower)
    b_l = abs(b_leader)
    room = max(gap, 0.0) + (v_leader ** 2) / (2.0 * b_l)
    return b_f * (-reaction + math.sqrt(reaction ** 2 + 2.0 * room / b_f))


def stop_line_speed(distance: float, b: float, reaction: float) -> float:
    """Safe speed for stopping within `distance` of a fixed point."""
    return safe_speed(distance, 0.0, b, 1.0, reaction)


def max_entry_speed(
    gap_total: float,
    leader_v: float,
    leader_lo: float,
    leader_length: float,
    rear_margin: float,
    a_min: float,
    plan_dt: float,
    time_headway: float,
) -> float:
    """
    Largest entry speed v_f for which the follower's longitudinal row
        u_L − g·u_f ≥ (v_f − v_L) + (2/dt)(leader_length + rear_margin − gap_total)
    still holds with the leader at its slowest (u_L = leader_lo) and the
    follower braking hard (u_f = max(0, v_f + a_min·dt)). Negative → no
    admissible speed. `gap_total` is s_follower − s_leader.
    """
    g = 1.0 + 2.0 * time_headway / plan_dt
    k = leader_lo + leader_v - (2.0 / plan_dt) * (leader_length + rear_margin - gap_total)
    knee = -a_min * plan_dt
    if k <= knee:
        return k
    return (k - g * a_min * plan_dt) / (1.0 + g)

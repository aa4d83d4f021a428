# app/auction.py
"""
Priority auction: bidding features → master bids → sponsored-search ordering
→ overflow repair → deduplicated candidate sequences (one per ω vector).

Bid strategies:
  behavior  weighted sum of normalized urgency, progress, waiting time and assertiveness
  fifo      waiting time only (arrival order)
  random    uniform random bids
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.errors import ConfigError
from app.mechanism import AuctionInstance, crossing_time_alphas, overflow_bound
from app.vehicle import VehicleState

logger = logging.getLogger(__name__)

Omega = Tuple[float, float, float, float]

DEFAULT_OMEGA_SET: Tuple[Omega, ...] = (
    (0.25, 0.25, 0.25, 0.25),
    (0.5, 0.2, 0.1, 0.2),
    (0.1, 0.5, 0.2, 0.2),
    (0.2, 0.1, 0.5, 0.2),
    (0.1, 0.2, 0.2, 0.5),
)
FIFO_OMEGA: Omega = (0.0, 0.0, 1.0, 0.0)
STRATEGIES = ("behavior", "fifo", "random")
ALPHA_RULES = ("crossing_time", "harmonic")
MIN_TAU_SPEED = 0.1


@dataclass(frozen=True)
class AuctionParams:
    c1: float = 60.0        # cap on time to intersection, s
    c2: float = 150.0       # bound on distance, m (the control zone length)
    w_cap: float = 120.0    # waiting-time normalizer, s
    a_cap: float = 10.0     # assertiveness normalizer
    omega_set: Tuple[Omega, ...] = DEFAULT_OMEGA_SET
    overflow_fraction: float = 0.5
    strategy: str = "behavior"
    alpha_rule: str = "crossing_time"

    def __post_init__(self):
        object.__setattr__(self, "omega_set", tuple(tuple(float(x) for x in w) for w in self.omega_set))
        if not self.omega_set:
            raise ConfigError("omega_set must not be empty", "auction.omega_set")
        for k, w in enumerate(self.omega_set):
            if len(w) != 4 or any(x < 0 for x in w):
                raise ConfigError(f"need 4 non-negative coefficients, got {w}", f"auction.omega_set[{k}]")
        for name in ("c1", "c2", "w_cap", "a_cap"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"must be > 0, got {getattr(self, name)}", f"auction.{name}")
        if not 0.0 < self.overflow_fraction < 1.0:
            raise ConfigError(f"must lie in (0, 1), got {self.overflow_fraction}", "auction.overflow_fraction")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}, expected one of {STRATEGIES}", "auction.strategy")
        if self.alpha_rule not in ALPHA_RULES:
            raise ConfigError(f"unknown alpha rule {self.alpha_rule!r}", "auction.alpha_rule")

    @property
    def scales(self) -> np.ndarray:
        return np.array([self.c1, self.c2, self.w_cap, self.a_cap])


@dataclass(frozen=True)
class FeatureVector:
    urgency: float
    progress: float
    waiting: float
    assertiveness: float

    def as_array(self) -> np.ndarray:
        return np.array([self.urgency, self.progress, self.waiting, self.assertiveness])


@dataclass(frozen=True)
class MasterBid:
    vehicle_id: int
    features: FeatureVector
    omega: Optional[Omega]
    value: float
    normalized: Tuple[float, ...] = ()


@dataclass(frozen=True)
class PrioritySequence:
    order: Tuple[int, ...]
    slot_alphas: Tuple[float, ...]
    omega_used: Optional[Omega] = None
    transfers: Tuple[Tuple[int, int, float], ...] = ()   # (giver, receiver, amount)

    def rank(self) -> Dict[int, int]:
        return {vid: k for k, vid in enumerate(self.order)}

    def __len__(self) -> int:
        return len(self.order)


def harmonic_alphas(n: int) -> Tuple[float, ...]:
    return tuple(1.0 / k for k in range(1, n + 1))


def compute_features(state: VehicleState, c1: float, c2: float) -> FeatureVector:
    tau = min(max(state.s, 0.0) / max(state.v, MIN_TAU_SPEED), c1)
    return FeatureVector(
        urgency=c1 - tau,
        progress=c2 - state.s,
        waiting=state.wait_time,
        assertiveness=state.vclass.assertiveness(state.preference),
    )


def normalize_features(features: FeatureVector, params: AuctionParams) -> np.ndarray:
    return features.as_array() / params.scales


def master_bid(state: VehicleState, omega: Sequence[float], params: AuctionParams) -> MasterBid:
    f = compute_features(state, params.c1, params.c2)
    x = normalize_features(f, params)
    w = tuple(float(c) for c in omega)
    return MasterBid(state.id, f, w, float(np.dot(w, x)), tuple(float(c) for c in x))


def bid_values(
    states: Sequence[VehicleState],
    omega: Sequence[float],
    params: AuctionParams,
    rng: Optional[np.random.Generator] = None,
    strategy: Optional[str] = None,
) -> List[MasterBid]:
    strategy = strategy or params.strategy
    if strategy == "behavior":
        return [master_bid(s, omega, params) for s in states]
    if strategy == "fifo":
        return [master_bid(s, FIFO_OMEGA, params) for s in states]
    if strategy == "random":
        rng = rng if rng is not None else np.random.default_rng(0)
        draws = rng.random(len(states))
        return [
            MasterBid(s.id, compute_features(s, params.c1, params.c2), None, float(x))
            for s, x in zip(states, draws)
        ]
    raise ConfigError(f"unknown strategy {strategy!r}", "auction.strategy")


def run_ssa(bids: Sequence[MasterBid], rng_seed, alphas: Optional[Sequence[float]] = None) -> PrioritySequence:
    """Descending bid order; ties broken by a seeded random key. O(n log n)."""
    n = len(bids)
    if n == 0:
        return PrioritySequence(order=(), slot_alphas=())
    keys = np.random.default_rng(rng_seed).random(n)
    idx = sorted(range(n), key=lambda k: (-bids[k].value, keys[k]))
    omegas = {b.omega for b in bids}
    slot_alphas = tuple(alphas[:n]) if alphas is not None else harmonic_alphas(n)
    return PrioritySequence(
        order=tuple(bids[k].vehicle_id for k in idx),
        slot_alphas=slot_alphas,
        omega_used=omegas.pop() if len(omegas) == 1 else None,
    )


def physical_leaders(states: Sequence[VehicleState]) -> Dict[int, Optional[int]]:
    """Closest same-lane vehicle ahead (smaller s) for each vehicle, or None."""
    lanes: Dict[Tuple[int, int], List[VehicleState]] = {}
    for st in states:
        lanes.setdefault(st.lane_key, []).append(st)
    out: Dict[int, Optional[int]] = {}
    for queue in lanes.values():
        queue.sort(key=lambda st: (st.s, st.id))
        prev = None
        for st in queue:
            out[st.id] = prev
            prev = st.id
    return out


def repair_lane_order(order: Sequence[int], leaders: Mapping[int, Optional[int]]) -> Tuple[int, ...]:
    """Demote each blocked vehicle to just behind its physical leader."""
    members = set(order)
    pending = list(order)
    placed: set = set()
    result: List[int] = []
    while pending:
        for k, vid in enumerate(pending):
            lead = leaders.get(vid)
            if lead is None or lead not in members or lead in placed:
                result.append(vid)
                placed.add(vid)
                pending.pop(k)
                break
        else:  # pragma: no cover - leaders form chains, one head always exists
            result.extend(pending)
            break
    return tuple(result)


def apply_overflow(
    seq: PrioritySequence,
    states: Sequence[VehicleState],
    valuations: Mapping[int, float],
    fraction: float = 0.5,
) -> PrioritySequence:
    """
    For each rear vehicle scheduled ahead of its physical leader, transfer
    fraction × overflow_bound of its bid to the leader, re-sort, then
    demote anything still blocked.
    """
    if len(seq) < 2:
        return seq
    leaders = physical_leaders(states)
    rank = seq.rank()
    blocked = [
        (vid, leaders[vid]) for vid in seq.order
        if leaders.get(vid) is not None and leaders[vid] in rank and rank[leaders[vid]] > rank[vid]
    ]
    if not blocked:
        return seq

    values = {vid: float(valuations[vid]) for vid in seq.order}
    alphas = seq.slot_alphas if len(seq.slot_alphas) == len(seq) else harmonic_alphas(len(seq))
    slot_vals = tuple(max(values[v], 1e-12) for v in seq.order)
    instance = AuctionInstance(valuations=slot_vals, alphas=alphas)
    transfers = []
    for rear, front in blocked:
        i = rank[rear] + 1
        m = rank[front] - rank[rear]
        bound = overflow_bound(instance, i, m)
        if bound <= 0:
            logger.debug("no admissible transfer for %s → %s (bound %.4g)", rear, front, bound)
            continue
        q = fraction * bound
        values[rear] -= q
        values[front] += q
        transfers.append((rear, front, q))

    resorted = sorted(seq.order, key=lambda vid: (-values[vid], rank[vid]))
    order = repair_lane_order(resorted, leaders)
    return replace(seq, order=order, transfers=seq.transfers + tuple(transfers))


def _slot_alphas(order: Sequence[int], by_id: Mapping[int, VehicleState], params: AuctionParams,
                 speed_limit: float, transit: float) -> Tuple[float, ...]:
    if params.alpha_rule == "harmonic":
        return harmonic_alphas(len(order))
    return crossing_time_alphas([by_id[v].s for v in order], speed_limit, transit)


def generate_candidates(
    states: Sequence[VehicleState],
    omega_set: Sequence[Sequence[float]],
    c1: float,
    c2: float,
    rng_seed,
    *,
    params: Optional[AuctionParams] = None,
    speed_limit: float = 20.0,
    transit: float = 1.5,
) -> List[PrioritySequence]:
    """
    One overflow-repaired sequence per ω, deduplicated by order (first ω wins).

    fifo and random bids do not depend on ω: they draw one bid vector per
    call and yield a single candidate.
    """
    if not omega_set:
        raise ConfigError("omega_set must not be empty", "auction.omega_set")
    params = replace(params or AuctionParams(), c1=c1, c2=c2)
    if params.strategy != "behavior":
        omega_set = omega_set[:1]
    by_id = {s.id: s for s in states}
    out: List[PrioritySequence] = []
    seen = set()
    for k, omega in enumerate(omega_set):
        rng = np.random.default_rng([int(rng_seed), k])
        bids = bid_values(states, omega, params, rng=rng)
        seq = run_ssa(bids, rng_seed)
        seq = replace(seq, slot_alphas=_slot_alphas(seq.order, by_id, params, speed_limit, transit))
        seq = apply_overflow(seq, states, {b.vehicle_id: b.value for b in bids}, params.overflow_fraction)
        seq = replace(seq, slot_alphas=_slot_alphas(seq.order, by_id, params, speed_limit, transit))
        if params.strategy != "behavior":
            seq = replace(seq, omega_used=None)
        if seq.order in seen:
            continue
        seen.add(seq.order)
        out.append(seq)
    return out

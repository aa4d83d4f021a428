# app/mechanism.py
"""
Mechanism oracles for the priority auction.

- utility:                      SSA (next-price, telescoping) or first-price payoff
- check_incentive_compatibility grid search over unilateral deviations
- check_welfare_maximization:   permutation brute force, per conflict partition
- overflow_bound / with_overflow: admissible bid transfer for blocked vehicles,
                                and instances that charge it so the IC grid
                                search can be run against the transfer
- overbid_delta:                utility change from over-bidding one slot up
- crossing_time_alphas:         slot values from projected crossing times

Agents are indexed 0..n-1; slots are positions in the descending bid order.
Ties are broken by agent index so every oracle is deterministic.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml

from app.errors import MechanismError
from app.geometry import DEFAULT_TABLE, ConflictTable, LaneGroup


PAYMENT_RULES = ("ssa", "first_price")
UTILITY_TOL = 1e-9
TIE_EPS = 1e-6


@dataclass(frozen=True)
class OverflowTransfer:
    """
    A blocked agent (`giver`) that keeps a slot ahead of any of its
    `blockers` pays amount·alpha for it; ranked behind all of them it pays
    nothing.
    """

    giver: int
    blockers: Tuple[int, ...]
    amount: float
    alpha: float

    def charge(self, agent: int, order: Sequence[int]) -> float:
        if agent != self.giver:
            return 0.0
        rank = {a: k for k, a in enumerate(order)}
        if any(rank[self.giver] < rank[b] for b in self.blockers):
            return self.amount * self.alpha
        return 0.0

    def restricted(self, agents: Sequence[int]) -> Optional["OverflowTransfer"]:
        local = {a: k for k, a in enumerate(agents)}
        blockers = tuple(local[b] for b in self.blockers if b in local)
        if self.giver not in local or not blockers:
            return None
        return replace(self, giver=local[self.giver], blockers=blockers)


@dataclass(frozen=True)
class AuctionInstance:
    valuations: Tuple[float, ...]                 # private value per agent
    alphas: Tuple[float, ...]                     # slot value, strictly decreasing
    lane_of: Optional[Tuple[int, ...]] = None
    groups: Optional[Tuple[LaneGroup, ...]] = None
    overflow: Optional[OverflowTransfer] = None

    def __post_init__(self):
        object.__setattr__(self, "valuations", tuple(float(x) for x in self.valuations))
        object.__setattr__(self, "alphas", tuple(float(x) for x in self.alphas))
        if any(z <= 0 for z in self.valuations):
            raise MechanismError(f"valuations must be > 0, got {self.valuations}")
        if any(a <= 0 for a in self.alphas):
            raise MechanismError(f"alphas must be > 0, got {self.alphas}")
        if any(a <= b for a, b in zip(self.alphas, self.alphas[1:])):
            raise MechanismError(f"alphas must be strictly decreasing, got {self.alphas}")
        n = len(self.valuations)
        if self.lane_of is not None and len(self.lane_of) != n:
            raise MechanismError("lane_of must have one entry per agent")
        if self.groups is not None and len(self.groups) != n:
            raise MechanismError("groups must have one entry per agent")
        if self.overflow is not None:
            agents = (self.overflow.giver,) + self.overflow.blockers
            if any(not 0 <= a < n for a in agents) or self.overflow.giver in self.overflow.blockers:
                raise MechanismError(f"overflow agents {agents} invalid for {n} agents")

    @property
    def n_agents(self) -> int:
        return len(self.valuations)

    @property
    def n_slots(self) -> int:
        return len(self.alphas)

    def alpha(self, slot: int) -> float:
        """0-based slot value; 0 past the last slot."""
        return self.alphas[slot] if 0 <= slot < self.n_slots else 0.0

    def subset(self, agents: Sequence[int]) -> "AuctionInstance":
        k = min(len(agents), self.n_slots)
        return AuctionInstance(
            valuations=tuple(self.valuations[a] for a in agents),
            alphas=self.alphas[:k],
            lane_of=None if self.lane_of is None else tuple(self.lane_of[a] for a in agents),
            groups=None if self.groups is None else tuple(self.groups[a] for a in agents),
            overflow=None if self.overflow is None else self.overflow.restricted(agents),
        )


@dataclass(frozen=True)
class UtilityReport:
    order: Tuple[int, ...]
    utilities: Tuple[float, ...]
    welfare: float


@dataclass
class Deviation:
    agent: int
    bid: float
    truthful_utility: float
    deviating_utility: float


@dataclass
class IcReport:
    payment_rule: str
    checked: int = 0
    violations: List[Deviation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass
class WelfareReport:
    ssa_welfare: float
    brute_force_welfare: float
    partition_welfare: List[Tuple[float, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return abs(self.ssa_welfare - self.brute_force_welfare) <= 1e-9 * max(1.0, abs(self.brute_force_welfare))


def allocation(bids: Sequence[float]) -> Tuple[int, ...]:
    """Agents in descending bid order; equal bids keep index order."""
    return tuple(sorted(range(len(bids)), key=lambda a: (-bids[a], a)))


def utility(
    instance: AuctionInstance,
    bids: Sequence[float],
    agent: int,
    payment_rule: str = "ssa",
) -> float:
    if payment_rule not in PAYMENT_RULES:
        raise MechanismError(f"unknown payment rule {payment_rule!r}, expected one of {PAYMENT_RULES}")
    if len(bids) != instance.n_agents:
        raise MechanismError(f"expected {instance.n_agents} bids, got {len(bids)}")
    order = allocation(bids)
    slot = order.index(agent)
    if slot >= instance.n_slots:
        return 0.0
    zeta = instance.valuations[agent]
    transfer = instance.overflow.charge(agent, order) if instance.overflow is not None else 0.0
    if payment_rule == "first_price":
        return (zeta - bids[agent]) * instance.alpha(slot) - transfer

    # next-price payments telescope over every slot below
    ranked_bids = [bids[a] for a in order]
    payment = 0.0
    for j in range(slot, instance.n_slots):
        next_bid = ranked_bids[j + 1] if j + 1 < len(order) else 0.0
        payment += next_bid * (instance.alpha(j) - instance.alpha(j + 1))
    return zeta * instance.alpha(slot) - payment - transfer


def welfare(instance: AuctionInstance, order: Sequence[int]) -> float:
    return float(sum(instance.valuations[a] * instance.alpha(k) for k, a in enumerate(order)))


def report(instance: AuctionInstance, bids: Sequence[float], payment_rule: str = "ssa") -> UtilityReport:
    order = allocation(bids)
    utils = tuple(utility(instance, bids, a, payment_rule) for a in range(instance.n_agents))
    return UtilityReport(order=order, utilities=utils, welfare=welfare(instance, order))


# ---- conflict partitions ----

def conflict_partitions(
    groups: Optional[Sequence[LaneGroup]],
    lane_of: Optional[Sequence[int]] = None,
    table: ConflictTable = DEFAULT_TABLE,
) -> List[List[int]]:
    """Connected components of 'conflicts or shares a trajectory or lane'."""
    if groups is None:
        n = 0 if lane_of is None else len(lane_of)
        return [list(range(n))] if n else []
    n = len(groups)
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in itertools.combinations(range(n), 2):
        same_lane = (
            lane_of is not None
            and lane_of[a] == lane_of[b]
            and groups[a].road == groups[b].road
        )
        if groups[a] == groups[b] or same_lane or table.conflicts(groups[a], groups[b]):
            parent[find(b)] = find(a)

    parts: Dict[int, List[int]] = {}
    for a in range(n):
        parts.setdefault(find(a), []).append(a)
    return sorted(parts.values(), key=lambda p: p[0])


def _partitions_of(instance: AuctionInstance, use_partitions: bool) -> List[List[int]]:
    if use_partitions and instance.groups is not None:
        return conflict_partitions(instance.groups, instance.lane_of)
    return [list(range(instance.n_agents))]


# ---- incentive compatibility ----

def deviation_grid(instance: AuctionInstance, agent: int, resolution: float) -> np.ndarray:
    """Regular grid over [0, 2·max value] plus every opponent bid ± ε and the agent's own value."""
    if resolution <= 0:
        raise MechanismError(f"grid resolution must be > 0, got {resolution}")
    top = 2.0 * max(instance.valuations)
    grid = [np.arange(0.0, top + resolution / 2, resolution)]
    others = np.array([z for a, z in enumerate(instance.valuations) if a != agent])
    if others.size:
        grid += [others, others - TIE_EPS, others + TIE_EPS]
    grid.append(np.array([instance.valuations[agent]]))
    points = np.concatenate(grid)
    return np.unique(points[points >= 0.0])


def check_incentive_compatibility(
    instance: AuctionInstance,
    bid_grid_resolution: float = 0.1,
    payment_rule: str = "ssa",
    use_partitions: bool = True,
) -> IcReport:
    """Every unilateral deviation from truthful bidding, others truthful."""
    out = IcReport(payment_rule=payment_rule)
    for part in _partitions_of(instance, use_partitions):
        sub = instance.subset(part)
        truthful = list(sub.valuations)
        for local, agent in enumerate(part):
            u_true = utility(sub, truthful, local, payment_rule)
            for b in deviation_grid(sub, local, bid_grid_resolution):
                bids = truthful.copy()
                bids[local] = float(b)
                u_dev = utility(sub, bids, local, payment_rule)
                out.checked += 1
                if u_dev > u_true + UTILITY_TOL:
                    out.violations.append(Deviation(agent, float(b), u_true, u_dev))
    return out


# ---- welfare ----

def _best_welfare(instance: AuctionInstance) -> float:
    k = min(instance.n_agents, instance.n_slots)
    best = -np.inf
    for perm in itertools.permutations(range(instance.n_agents), k):
        best = max(best, welfare(instance, perm))
    return float(best) if k else 0.0


def check_welfare_maximization(instance: AuctionInstance, use_partitions: bool = True) -> WelfareReport:
    """Truthful SSA welfare vs. brute force over slot assignments, per partition and summed."""
    parts = _partitions_of(instance, use_partitions)
    rows = []
    for part in parts:
        sub = instance.subset(part)
        ssa = welfare(sub, allocation(sub.valuations))
        rows.append((ssa, _best_welfare(sub)))
    total_ssa = float(sum(r[0] for r in rows))

    # group-respecting global optimum: enumerate the product of per-partition assignments
    subs = [instance.subset(p) for p in parts]
    spaces = [list(itertools.permutations(range(s.n_agents), min(s.n_agents, s.n_slots))) for s in subs]
    size = int(np.prod([len(s) for s in spaces])) if spaces else 0
    if 0 < size <= 200_000:
        total_best = max(
            sum(welfare(s, perm) for s, perm in zip(subs, combo))
            for combo in itertools.product(*spaces)
        )
    else:
        total_best = float(sum(r[1] for r in rows))
    return WelfareReport(ssa_welfare=total_ssa, brute_force_welfare=float(total_best), partition_welfare=rows)


# ---- overflow ----

def _check_jump(instance: AuctionInstance, i: int, m: int) -> None:
    if i < 1 or i > instance.n_slots:
        raise MechanismError(f"slot i={i} undefined for {instance.n_slots} slots")
    if m < 0:
        raise MechanismError(f"jump size must be >= 0, got {m}")
    if i + m > instance.n_slots:
        raise MechanismError(f"slot i+m={i + m} exceeds K={instance.n_slots}")
    if i + m > instance.n_agents:
        raise MechanismError(f"slot i+m={i + m} has no agent (n={instance.n_agents})")


def _displacement_cost(instance: AuctionInstance, i: int, m: int) -> float:
    z, a = instance.valuations, instance.alphas
    # 1-based slots s = i .. i+m-1
    return sum(z[s] * (a[s - 1] - a[s]) for s in range(i, i + m))


def overflow_bound(instance: AuctionInstance, i: int, m: int) -> float:
    """
    Largest admissible transfer (exclusive) for the agent in 1-based slot i
    giving up m slots. Agents must be listed in slot order. m = 0 → 0.
    """
    _check_jump(instance, i, m)
    if m == 0:
        return 0.0
    z, a = instance.valuations, instance.alphas
    zi, ai = z[i - 1], a[i - 1]
    return zi * (1.0 - a[i + m - 1] / ai) - _displacement_cost(instance, i, m) / ai


def with_overflow(instance: AuctionInstance, i: int, m: int, q: float) -> AuctionInstance:
    """
    The instance with the agent in 1-based slot i blocked by the m agents
    in slots i+1..i+m, paying q·α_i whenever its bid keeps it ahead of any
    of them. Agents must be listed in slot order.

    Truthful bidding then stays a best response for that agent iff
    q <= overflow_bound(instance, i, m); check_incentive_compatibility
    finds the profitable drop behind the blockers otherwise.
    """
    _check_jump(instance, i, m)
    if m < 1:
        raise MechanismError(f"an overflow needs at least one blocker, got m={m}")
    if q < 0:
        raise MechanismError(f"transfer must be >= 0, got {q}")
    z = instance.valuations
    if any(a < b for a, b in zip(z, z[1:])):
        raise MechanismError("overflow instances must list agents in slot order")
    transfer = OverflowTransfer(
        giver=i - 1,
        blockers=tuple(range(i, i + m)),
        amount=float(q),
        alpha=instance.alphas[i - 1],
    )
    return replace(instance, overflow=transfer)


def overbid_delta(v_k: float, b_k: float, t_prev: float, t_k: float) -> float:
    """d = (v − b)(1/t_prev − 1/t_k); positive when the bidder undervalues itself."""
    if t_prev <= 0 or t_k <= 0:
        raise MechanismError(f"crossing times must be > 0, got t_prev={t_prev}, t_k={t_k}")
    if t_prev >= t_k:
        raise MechanismError(f"need t_prev < t_k, got {t_prev} >= {t_k}")
    return (v_k - b_k) * (1.0 / t_prev - 1.0 / t_k)


def crossing_time_alphas(distances: Sequence[float], speed_limit: float, transit: float) -> Tuple[float, ...]:
    """
    α_k = 1/t_k where t_k is slot k's projected crossing time: the vehicle
    reaches the line at d_k / speed_limit but not before slot k-1 has cleared.
    """
    if speed_limit <= 0:
        raise MechanismError(f"speed_limit must be > 0, got {speed_limit}")
    if transit <= 0:
        raise MechanismError(f"transit time must be > 0, got {transit}")
    times = []
    prev = 0.0
    for d in distances:
        t = max(max(d, 0.0) / speed_limit, prev) + transit
        times.append(t)
        prev = t
    return tuple(1.0 / t for t in times)


# ---- instance generation / IO ----

def random_instance(
    rng: np.random.Generator,
    n: int,
    n_slots: Optional[int] = None,
    with_groups: bool = False,
    zeta_range: Tuple[float, float] = (1.0, 10.0),
) -> AuctionInstance:
    k = n if n_slots is None else n_slots
    zetas = tuple(np.round(rng.uniform(*zeta_range, size=n), 3))
    gaps = rng.uniform(0.5, 3.0, size=k)
    alphas = tuple(1.0 / np.cumsum(gaps))
    groups = None
    if with_groups:
        groups = tuple(LaneGroup(int(r), int(i)) for r, i in zip(rng.integers(0, 4, n), rng.integers(0, 3, n)))
    return AuctionInstance(valuations=zetas, alphas=alphas, groups=groups)


def load_instances(path: Path) -> List[AuctionInstance]:
    """
    YAML fixture: a list of mappings with `valuations`, `alphas` and
    optionally `groups` ("road-intention" labels) and `lanes`.
    """
    with Path(path).open("r", encoding="utf-8") as f:
        raw = yaml.safe_load(f) or []
    if not isinstance(raw, list):
        raise MechanismError(f"{path}: expected a list of instances")
    out = []
    for k, item in enumerate(raw):
        if not isinstance(item, dict) or "valuations" not in item or "alphas" not in item:
            raise MechanismError(f"{path}: instance {k} needs 'valuations' and 'alphas'")
        groups = item.get("groups")
        out.append(
            AuctionInstance(
                valuations=tuple(item["valuations"]),
                alphas=tuple(item["alphas"]),
                lane_of=tuple(item["lanes"]) if item.get("lanes") is not None else None,
                groups=tuple(LaneGroup.parse(g) for g in groups) if groups else None,
            )
        )
    return out


def reports_frame(rows: Iterable[Dict]) -> pd.DataFrame:
    return pd.DataFrame(list(rows))

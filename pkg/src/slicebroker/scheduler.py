"""Radio resource assignment for sliced cells.

Two modes are supported. In the two-layer mode an upper layer hands each
active slice a PRB quota and each slice then shares its quota among its own
flows round-robin, without seeing anything outside the slice. In the pooled
mode slices draw PRBs from one shared pool in priority order.

All functions here are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Dict, Mapping, Optional, Sequence, Tuple


class SparePolicy(str, Enum):
    NONE = "NONE"
    PROPORTIONAL = "PROPORTIONAL"


class PoolOrdering(str, Enum):
    PRIORITY_THEN_ARRIVAL = "PRIORITY_THEN_ARRIVAL"


@dataclass(frozen=True)
class QuotaInput:
    slice_id: str
    granted_prb: int
    spare_eligible: bool = True


@dataclass
class QuotaAssignment:
    cell_id: Optional[str]
    slot: Optional[int]
    per_slice_quota: Dict[str, int]
    # slice -> PRBs granted but not covered by the quota (outage only)
    deficits: Dict[str, int] = field(default_factory=dict)

    @property
    def overcommitted(self) -> bool:
        return bool(self.deficits)

    @property
    def total(self) -> int:
        return sum(self.per_slice_quota.values())


@dataclass(frozen=True)
class PoolDemand:
    slice_id: str
    priority: int
    arrival_seq: int
    demand: int


@dataclass(frozen=True)
class PoolPolicy:
    ordering: PoolOrdering = PoolOrdering.PRIORITY_THEN_ARRIVAL
    caps: Mapping[str, int] = field(default_factory=dict)


def largest_remainder(weights: Mapping[str, int], total: int) -> Dict[str, int]:
    """Split ``total`` PRBs in proportion to ``weights`` (Hamilton method).

    Leftover units go to the largest fractional remainders; equal remainders
    favour the lexicographically smaller key. The result always sums to
    ``total`` unless every weight is zero, in which case nothing is handed out.
    """
    keys = sorted(weights)
    wsum = sum(weights[k] for k in keys)
    if wsum <= 0 or total <= 0:
        return {k: 0 for k in keys}
    exact = {k: Fraction(weights[k] * total, wsum) for k in keys}
    out = {k: int(exact[k]) for k in keys}
    left = total - sum(out.values())
    by_remainder = sorted(keys, key=lambda k: (-(exact[k] - out[k]), k))
    for k in by_remainder[:left]:
        out[k] += 1
    return out


def _as_input(g) -> QuotaInput:
    if isinstance(g, QuotaInput):
        return g
    slice_id, prb = g[0], g[1]
    eligible = g[2] if len(g) > 2 else True
    return QuotaInput(slice_id, prb, eligible)


def allocate_quotas(active_grants, effective_capacity: int,
                    spare_policy: SparePolicy = SparePolicy.NONE,
                    cell_id: Optional[str] = None, slot: Optional[int] = None) -> QuotaAssignment:
    """Upper-layer inter-slice quota assignment for one cell and slot.

    ``active_grants`` holds :class:`QuotaInput` items or ``(slice_id, prb)``
    tuples. When an outage leaves less capacity than was granted, every
    quota is scaled down in proportion and the shortfall is reported in
    ``deficits`` instead of raising.
    """
    grants = [_as_input(g) for g in active_grants]
    granted = {g.slice_id: g.granted_prb for g in grants}
    capacity = max(0, int(effective_capacity))
    total = sum(granted.values())

    if total > capacity:
        quotas = largest_remainder(granted, capacity)
        deficits = {k: granted[k] - quotas[k] for k in sorted(granted) if granted[k] > quotas[k]}
        return QuotaAssignment(cell_id, slot, quotas, deficits)

    quotas = dict(granted)
    if SparePolicy(spare_policy) is SparePolicy.PROPORTIONAL:
        eligible = {g.slice_id: g.granted_prb for g in grants if g.spare_eligible}
        extra = largest_remainder(eligible, capacity - total)
        for k, v in extra.items():
            quotas[k] += v
    return QuotaAssignment(cell_id, slot, quotas)


def intra_slice_schedule(slice_id: str, quota: int, flows: Sequence[Tuple[str, int]],
                         rr_pointer: int = 0) -> Tuple[Dict[str, int], int]:
    """Round-robin the slice quota over its flows, one PRB per turn.

    ``flows`` is an ordered list of ``(flow_id, backlog_prb)``. Serving starts
    at index ``rr_pointer`` and skips empty backlogs. Returns the PRBs given
    to each served flow and the index of the flow that gets the next turn.
    """
    n = len(flows)
    if n == 0:
        return {}, 0
    ptr = rr_pointer % n
    rem = [max(0, b) for _, b in flows]
    alloc = [0] * n
    left = max(0, quota)

    while left > 0:
        order = [(ptr + j) % n for j in range(n)]
        active = [i for i in order if rem[i] > 0]
        if not active:
            break
        rounds = min(left // len(active), min(rem[i] for i in active))
        if rounds > 0:
            for i in active:
                alloc[i] += rounds
                rem[i] -= rounds
            left -= rounds * len(active)
            ptr = (active[-1] + 1) % n
            continue
        # fewer PRBs than active flows: one partial pass
        for i in active[:left]:
            alloc[i] += 1
            rem[i] -= 1
        ptr = (active[left - 1] + 1) % n
        left = 0

    return {flows[i][0]: alloc[i] for i in range(n) if alloc[i] > 0}, ptr


def pooled_schedule(demands: Sequence[PoolDemand], capacity: int,
                    policy: Optional[PoolPolicy] = None) -> Dict[str, int]:
    """Serve slices from a shared pool by (priority, arrival order)."""
    caps = policy.caps if policy is not None else {}
    pool = max(0, int(capacity))
    out = {}
    for d in sorted(demands, key=lambda d: (d.priority, d.arrival_seq, d.slice_id)):
        want = max(0, d.demand)
        if d.slice_id in caps:
            want = min(want, caps[d.slice_id])
        take = min(want, pool)
        out[d.slice_id] = take
        pool -= take
    return out

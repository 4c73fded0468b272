"""Functional model of a shared RAN.

Cells broadcast up to six PLMN-ids. UEs attach to cells broadcasting their
home PLMN and are routed to a core endpoint: their own operator's MME under
MOCN, the single shared MME under GWCN. Each :meth:`SharedRan.step` runs the
slice schedulers for every cell and returns per-slice measurements.
"""

from __future__ import annotations

import zlib
from collections import Counter, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .domain import (DEFAULT_CELL_CAPACITY, DEFAULT_EFFICIENCY, Mobility,
                     SchedulingMode, SliceGrant, TenantId)
from .errors import ClockError, InvariantViolation, TopologyError
from .scheduler import (PoolDemand, PoolPolicy, QuotaInput, SparePolicy,
                        allocate_quotas, intra_slice_schedule, pooled_schedule)
from .telemetry import BACKGROUND, MeasurementRecord

MAX_BROADCAST_PLMNS = 6
CONTEXT_WINDOW = 10


class SharingMode(str, Enum):
    MOCN = "MOCN"
    GWCN = "GWCN"


class Archetype(str, Enum):
    MULTI_CORE_SHARED_RAN = "MULTI_CORE_SHARED_RAN"
    COVERAGE_COLLABORATION = "COVERAGE_COLLABORATION"
    REGIONAL_COVERAGE_SHARING = "REGIONAL_COVERAGE_SHARING"
    COMMON_SPECTRUM_SHARING = "COMMON_SPECTRUM_SHARING"
    SHARED_CORE_MULTI_RAN = "SHARED_CORE_MULTI_RAN"
    CUSTOM = "CUSTOM"


@dataclass
class CellModel:
    cell_id: str
    capacity_prb_per_slot: int = DEFAULT_CELL_CAPACITY
    broadcast_plmns: List[str] = field(default_factory=list)
    neighbors: List[str] = field(default_factory=list)
    outage_schedule: Dict[int, int] = field(default_factory=dict)

    def effective_capacity(self, slot: int) -> int:
        return self.outage_schedule.get(slot, self.capacity_prb_per_slot)


@dataclass
class Topology:
    sharing_mode: SharingMode
    cells: Dict[str, CellModel]
    core_endpoints: Dict[str, str] = field(default_factory=dict)
    shared_mme: Optional[str] = None
    archetype: Archetype = Archetype.CUSTOM

    def validate(self):
        for cell in self.cells.values():
            if len(cell.broadcast_plmns) > MAX_BROADCAST_PLMNS:
                raise TopologyError("MAX_PLMN_EXCEEDED", cell.cell_id)
            if len(set(cell.broadcast_plmns)) != len(cell.broadcast_plmns):
                raise TopologyError("DUPLICATE_PLMN", cell.cell_id)
            if cell.capacity_prb_per_slot <= 0:
                raise TopologyError("BAD_CAPACITY", cell.cell_id)
            for slot, cap in cell.outage_schedule.items():
                if not 0 <= cap <= cell.capacity_prb_per_slot:
                    raise TopologyError("BAD_OUTAGE", f"{cell.cell_id} slot {slot}")
            for n in cell.neighbors:
                if n not in self.cells:
                    raise TopologyError("UNKNOWN_CELL", f"neighbor {n} of {cell.cell_id}")
        if self.sharing_mode is SharingMode.MOCN:
            plmns = {p for c in self.cells.values() for p in c.broadcast_plmns}
            missing = sorted(p for p in plmns if p not in self.core_endpoints)
            if missing:
                raise TopologyError("NO_CORE_ENDPOINT", ",".join(missing))
            used = [self.core_endpoints[p] for p in plmns]
            if len(set(used)) != len(used):
                raise TopologyError("SHARED_CORE_IN_MOCN", "MOCN operators need distinct cores")
        elif not self.shared_mme:
            raise TopologyError("NO_CORE_ENDPOINT", "GWCN needs one shared MME")
        return self

    def core_endpoint_for(self, plmn: str) -> str:
        if self.sharing_mode is SharingMode.GWCN:
            return self.shared_mme
        try:
            return self.core_endpoints[plmn]
        except KeyError:
            raise TopologyError("NO_CORE_ENDPOINT", plmn) from None


@dataclass
class UeModel:
    ue_id: str
    tenant: TenantId
    home_plmn: str
    serving_cell: Optional[str] = None
    slice_id: Optional[str] = None
    demand_prb_per_slot: int = 0
    mobility: Mobility = Mobility.STATIONARY
    core_endpoint: Optional[str] = None

    @property
    def attached(self) -> bool:
        return self.serving_cell is not None


@dataclass(frozen=True)
class AttachResult:
    ue_id: str
    cell_id: str
    core_endpoint: str


@dataclass(frozen=True)
class HandoverResult:
    ue_id: str
    source_cell: str
    target_cell: str
    core_endpoint: str


def _cell(topology: Topology, cell_id: str) -> CellModel:
    try:
        return topology.cells[cell_id]
    except KeyError:
        raise TopologyError("UNKNOWN_CELL", cell_id) from None


def add_operator(topology: Topology, cell_id: str, plmn: str, core_endpoint: str = None) -> CellModel:
    """Start broadcasting ``plmn`` in a cell.

    Under MOCN a PLMN new to the topology needs its own core endpoint; one
    named ``MME-<plmn>`` is registered when none is given.
    """
    cell = _cell(topology, cell_id)
    if plmn in cell.broadcast_plmns:
        raise TopologyError("DUPLICATE_PLMN", f"{plmn} already broadcast by {cell_id}")
    if len(cell.broadcast_plmns) >= MAX_BROADCAST_PLMNS:
        raise TopologyError("MAX_PLMN_EXCEEDED", f"{cell_id} already broadcasts {MAX_BROADCAST_PLMNS} PLMNs")
    if plmn not in topology.core_endpoints:
        topology.core_endpoints[plmn] = core_endpoint or f"MME-{plmn}"
    cell.broadcast_plmns.append(plmn)
    return cell


def attach(ue: UeModel, cell_id: str, topology: Topology) -> AttachResult:
    cell = _cell(topology, cell_id)
    if ue.home_plmn not in cell.broadcast_plmns:
        raise TopologyError("PLMN_NOT_BROADCAST", f"{cell_id} does not broadcast {ue.home_plmn}")
    endpoint = topology.core_endpoint_for(ue.home_plmn)
    ue.serving_cell = cell_id
    ue.core_endpoint = endpoint
    return AttachResult(ue.ue_id, cell_id, endpoint)


def handover(ue: UeModel, target_cell: str, topology: Topology) -> HandoverResult:
    if not ue.attached:
        raise TopologyError("NOT_ATTACHED", ue.ue_id)
    source = _cell(topology, ue.serving_cell)
    target = _cell(topology, target_cell)
    if target_cell not in source.neighbors:
        raise TopologyError("NOT_NEIGHBOR", f"{target_cell} is not adjacent to {source.cell_id}")
    # PLMN list of the target is learnt over X2; no home PLMN, no handover
    if ue.home_plmn not in target.broadcast_plmns:
        raise TopologyError("HANDOVER_REJECTED", f"{target_cell} does not broadcast {ue.home_plmn}")
    endpoint = topology.core_endpoint_for(ue.home_plmn)
    ue.serving_cell = target_cell
    ue.core_endpoint = endpoint
    return HandoverResult(ue.ue_id, source.cell_id, target_cell, endpoint)


@dataclass(frozen=True)
class BackgroundProfile:
    """Piecewise-constant mean background load over the day.

    ``segments`` is a sorted list of ``(first_slot_of_day, mean_prb)``.
    """
    segments: Tuple[Tuple[int, float], ...] = ((0, 0.0),)

    def mean_at(self, slot_of_day: int) -> float:
        mean = 0.0
        for first, m in self.segments:
            if first <= slot_of_day:
                mean = m
            else:
                break
        return mean


class BackgroundTraffic:
    """Seeded Poisson background demand per cell, capped at nominal capacity.

    Draws depend only on (seed, cell, slot), never on call order.
    """

    def __init__(self, profiles: Mapping[str, BackgroundProfile] = None, seed: int = 0,
                 day_length_slots: int = 86400, default: BackgroundProfile = None):
        self.profiles = dict(profiles or {})
        self.seed = seed
        self.day_length_slots = day_length_slots
        self.default = default or BackgroundProfile()

    def demand(self, cell: CellModel, slot: int) -> int:
        profile = self.profiles.get(cell.cell_id, self.default)
        mean = profile.mean_at(slot % self.day_length_slots)
        if mean <= 0:
            return 0
        rng = np.random.default_rng([self.seed, zlib.crc32(cell.cell_id.encode()), slot])
        return int(min(rng.poisson(mean), cell.capacity_prb_per_slot))


@dataclass
class CellSlot:
    cell_id: str
    effective_capacity: int
    background_demand: int
    background_delivered: int
    quotas: Dict[str, int]
    outage_deficits: Dict[str, int] = field(default_factory=dict)
    delivered: Dict[str, int] = field(default_factory=dict)

    @property
    def delivered_total(self) -> int:
        return self.background_delivered + sum(self.delivered.values())


@dataclass
class SlotOutcome:
    slot: int
    cells: Dict[str, CellSlot]
    records: List[MeasurementRecord]
    ue_alloc: Dict[str, int]


@dataclass(frozen=True)
class ActiveGrant:
    """A grant active in the current slot plus its admission order."""
    grant: SliceGrant
    arrival_seq: int


class SharedRan:
    """World state owned by the event loop: topology, UEs and RR pointers."""

    def __init__(self, topology: Topology, background: BackgroundTraffic = None,
                 mode: SchedulingMode = SchedulingMode.TWO_LAYER,
                 spare_policy: SparePolicy = SparePolicy.NONE,
                 efficiency_table: Mapping = None, pool_caps_at_grant: bool = True):
        self.topology = topology
        self.background = background or BackgroundTraffic()
        self.mode = SchedulingMode(mode)
        self.spare_policy = SparePolicy(spare_policy)
        self.efficiency = dict(efficiency_table or DEFAULT_EFFICIENCY)
        self.pool_caps_at_grant = pool_caps_at_grant
        self.ues: Dict[str, UeModel] = {}
        self.rr_pointers: Dict[Tuple[str, str], int] = {}
        self.ue_history: Dict[str, deque] = {}
        self.handovers = Counter()
        self.clock = -1

    def add_ue(self, ue: UeModel) -> UeModel:
        if ue.ue_id in self.ues:
            raise TopologyError("DUPLICATE_UE", ue.ue_id)
        self.ues[ue.ue_id] = ue
        self.ue_history[ue.ue_id] = deque(maxlen=CONTEXT_WINDOW)
        return ue

    def attach(self, ue_id: str, cell_id: str) -> AttachResult:
        return attach(self.ues[ue_id], cell_id, self.topology)

    def handover(self, ue_id: str, target_cell: str) -> HandoverResult:
        ue = self.ues[ue_id]
        result = handover(ue, target_cell, self.topology)
        if ue.slice_id is not None:
            self.handovers[ue.slice_id] += 1
        return result

    def ue_locations(self) -> Dict[str, Tuple[TenantId, str]]:
        return {u.ue_id: (u.tenant, u.serving_cell) for u in self.ues.values() if u.attached}

    def average_rate_mbps(self, ue_id: str) -> float:
        """Mean delivered rate over the last ten slots."""
        hist = self.ue_history.get(ue_id)
        if not hist:
            return 0.0
        ue = self.ues[ue_id]
        return sum(hist) / len(hist) * self.efficiency[ue.mobility]

    def _flows(self, cell_id: str) -> Dict[str, List[Tuple[str, int]]]:
        flows: Dict[str, List[Tuple[str, int]]] = {}
        for ue_id in sorted(self.ues):
            ue = self.ues[ue_id]
            if ue.serving_cell == cell_id and ue.slice_id is not None:
                flows.setdefault(ue.slice_id, []).append((ue_id, ue.demand_prb_per_slot))
        return flows

    def step(self, slot: int, active_grants: Sequence[ActiveGrant] = ()) -> SlotOutcome:
        if slot != self.clock + 1:
            raise ClockError(message=f"step {slot} after {self.clock}")
        self.clock = slot
        records: List[MeasurementRecord] = []
        cells: Dict[str, CellSlot] = {}
        ue_alloc: Dict[str, int] = {}

        for cell_id in sorted(self.topology.cells):
            cell = self.topology.cells[cell_id]
            cap = cell.effective_capacity(slot)
            here = sorted((a for a in active_grants if cell_id in a.grant.per_cell_prb),
                          key=lambda a: a.grant.slice_id)
            granted = {a.grant.slice_id: a.grant.per_cell_prb[cell_id] for a in here}
            flows = self._flows(cell_id)
            demanded = {sid: sum(b for _, b in flows.get(sid, [])) for sid in granted}

            # background only uses capacity nobody reserved
            bg_demand = self.background.demand(cell, slot)
            bg_room = max(0, cap - sum(granted.values()))
            bg_delivered = min(bg_demand, bg_room)
            slice_cap = cap - bg_delivered

            outage_deficits = {}
            if self.mode is SchedulingMode.TWO_LAYER:
                qa = allocate_quotas(
                    [QuotaInput(a.grant.slice_id, granted[a.grant.slice_id], a.grant.spare_eligible) for a in here],
                    slice_cap, self.spare_policy, cell_id, slot)
                quotas = qa.per_slice_quota
                outage_deficits = qa.deficits
            else:
                caps = granted if self.pool_caps_at_grant else {}
                quotas = pooled_schedule(
                    [PoolDemand(a.grant.slice_id, a.grant.qos.priority, a.arrival_seq,
                                demanded[a.grant.slice_id]) for a in here],
                    slice_cap, PoolPolicy(caps=caps))

            delivered = {}
            for a in here:
                sid = a.grant.slice_id
                key = (sid, cell_id)
                alloc, ptr = intra_slice_schedule(sid, quotas[sid], flows.get(sid, []),
                                                  self.rr_pointers.get(key, 0))
                self.rr_pointers[key] = ptr
                ue_alloc.update(alloc)
                delivered[sid] = sum(alloc.values())
                due = min(granted[sid], demanded[sid])
                records.append(MeasurementRecord(
                    slot=slot, cell_id=cell_id, slice_id=sid, tenant=a.grant.tenant,
                    demanded_prb=demanded[sid], quota_prb=quotas[sid],
                    delivered_prb=delivered[sid], deficit_prb=max(0, due - delivered[sid]),
                    granted_prb=granted[sid]))
            records.append(MeasurementRecord(
                slot=slot, cell_id=cell_id, slice_id=BACKGROUND, tenant=None,
                demanded_prb=bg_demand, quota_prb=bg_room, delivered_prb=bg_delivered))

            cs = CellSlot(cell_id, cap, bg_demand, bg_delivered, dict(quotas), outage_deficits, delivered)
            if cs.delivered_total > cap:
                raise InvariantViolation(message=f"cell {cell_id} slot {slot}: {cs.delivered_total} > {cap}")
            cells[cell_id] = cs

        for ue_id, ue in self.ues.items():
            if ue.attached:
                self.ue_history[ue_id].append(ue_alloc.get(ue_id, 0))
        return SlotOutcome(slot, cells, records, ue_alloc)

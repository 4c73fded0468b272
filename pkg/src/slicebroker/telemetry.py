"""Measurement store, SLA detection, background forecasting and tenant reports."""

from __future__ import annotations

import statistics
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

from .domain import TenantId
from .errors import TelemetryError

BACKGROUND = "BACKGROUND"
DEFAULT_FORECAST_WINDOW = 3


@dataclass(frozen=True)
class MeasurementRecord:
    slot: int
    cell_id: str
    slice_id: str
    tenant: Optional[TenantId]
    demanded_prb: int
    quota_prb: int
    delivered_prb: int
    deficit_prb: int = 0
    granted_prb: int = 0

    @property
    def is_background(self) -> bool:
        return self.slice_id == BACKGROUND


@dataclass(frozen=True)
class SlaEvent:
    slot: int
    cell_id: str
    slice_id: str
    tenant: TenantId
    deficit_prb: int


@dataclass(frozen=True)
class SliceKpi:
    slice_id: str
    slots: int
    demanded_prb: int
    delivered_prb: int
    deficit_prb: int
    sla_events: int
    handovers: int


@dataclass(frozen=True)
class KpiReport:
    tenant: TenantId
    range_start: int
    range_end: int
    slices: Tuple[SliceKpi, ...] = ()
    records: Tuple[MeasurementRecord, ...] = ()


def detect_sla_violations(slot_outcome) -> List[SlaEvent]:
    """One event per (slice, cell, slot) that fell short of its due PRBs.

    Accepts a slot outcome (anything with ``records``) or a plain iterable of
    measurement records.
    """
    records = getattr(slot_outcome, "records", slot_outcome)
    return [
        SlaEvent(r.slot, r.cell_id, r.slice_id, r.tenant, r.deficit_prb)
        for r in records
        if not r.is_background and r.deficit_prb > 0
    ]


class TelemetryStore:
    """Single-writer store fed by the simulator once per slot."""

    def __init__(self, capacities: Mapping[str, int] = None, day_length_slots: int = 86400,
                 default_background_fraction: float = 0.0):
        self.capacities = dict(capacities or {})
        self.day_length_slots = day_length_slots
        self.default_background_fraction = default_background_fraction
        self.records: List[MeasurementRecord] = []
        self.last_slot: Optional[int] = None
        self.tenants = set()
        # (cell, slot_of_day) -> observed background demand, oldest first
        self.background_history: Dict[Tuple[str, int], List[int]] = defaultdict(list)
        # (slice, cell) -> [delivered, deficit]
        self.totals: Dict[Tuple[str, str], List[int]] = defaultdict(lambda: [0, 0])
        self.handovers: List[Tuple[int, str, TenantId]] = []

    def register_tenant(self, tenant: TenantId):
        self.tenants.add(tenant)

    def __len__(self):
        return len(self.records)

    def ingest(self, records: Iterable[MeasurementRecord]):
        batch = list(records)
        if not batch:
            return self
        slots = [r.slot for r in batch]
        if self.last_slot is not None and min(slots) < self.last_slot:
            raise TelemetryError("OUT_OF_ORDER_BATCH",
                                 f"slot {min(slots)} after slot {self.last_slot}")
        if slots != sorted(slots):
            raise TelemetryError("OUT_OF_ORDER_BATCH", "batch not sorted by slot")
        for r in batch:
            self.records.append(r)
            if r.is_background:
                self.background_history[(r.cell_id, r.slot % self.day_length_slots)].append(r.demanded_prb)
            else:
                t = self.totals[(r.slice_id, r.cell_id)]
                t[0] += r.delivered_prb
                t[1] += r.deficit_prb
        self.last_slot = slots[-1]
        return self

    def record_handover(self, slot: int, slice_id: str, tenant: TenantId):
        self.handovers.append((slot, slice_id, tenant))

    def forecast_background(self, cell_id: str, slot_of_day: int, window: int = DEFAULT_FORECAST_WINDOW) -> float:
        """Seasonal moving average of background load at this slot of day."""
        if window < 1:
            raise ValueError("forecast window must be >= 1")
        history = self.background_history.get((cell_id, slot_of_day % self.day_length_slots))
        if not history:
            return self.default_background_fraction * self.capacities.get(cell_id, 0)
        return statistics.fmean(history[-window:])

    def build_tenant_report(self, tenant: TenantId, slot_range: Tuple[int, int] = None) -> KpiReport:
        """Per-slice KPIs for ``tenant`` only.

        ``slot_range`` is half open; ``None`` means everything stored. The
        report never carries background load, cell capacity or any record of
        another tenant.
        """
        if tenant not in self.tenants:
            raise TelemetryError("UNKNOWN_TENANT", str(tenant))
        lo, hi = slot_range if slot_range is not None else (0, (self.last_slot or 0) + 1)
        own = tuple(
            r for r in self.records
            if r.tenant == tenant and not r.is_background and lo <= r.slot < hi
        )
        by_slice = defaultdict(list)
        for r in own:
            by_slice[r.slice_id].append(r)
        hos = defaultdict(int)
        for slot, slice_id, t in self.handovers:
            if t == tenant and lo <= slot < hi:
                hos[slice_id] += 1
        kpis = []
        for slice_id in sorted(set(by_slice) | set(hos)):
            rs = by_slice.get(slice_id, [])
            kpis.append(SliceKpi(
                slice_id=slice_id,
                slots=len({r.slot for r in rs}),
                demanded_prb=sum(r.demanded_prb for r in rs),
                delivered_prb=sum(r.delivered_prb for r in rs),
                deficit_prb=sum(r.deficit_prb for r in rs),
                sla_events=sum(1 for r in rs if r.deficit_prb > 0),
                handovers=hos.get(slice_id, 0),
            ))
        return KpiReport(tenant, lo, hi, tuple(kpis), own)

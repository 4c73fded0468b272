"""Shared vocabulary: tenants, slice requests, grants and unit conversions.

Time is measured in integer slots (one slot is one second of simulated time
by default) and radio capacity in physical resource blocks (PRBs) per slot.
"""

from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from .errors import ValidationError

SLOT_SECONDS = 1.0
DEFAULT_CELL_CAPACITY = 100
MAX_PRIORITY = 15

_PLMN_RE = re.compile(r"^[0-9]{5,6}$")


class TenantKind(str, Enum):
    OPERATOR = "OPERATOR"
    SERVICE = "SERVICE"


class Bearer(str, Enum):
    GBR = "GBR"
    NON_GBR = "NON_GBR"


class ResourceKind(str, Enum):
    PHYSICAL_PRB = "PHYSICAL_PRB"
    DATA_RATE = "DATA_RATE"


class Mobility(str, Enum):
    STATIONARY = "STATIONARY"
    LOW = "LOW"
    MEDIUM = "MEDIUM"
    HIGH = "HIGH"


class OffloadingPolicy(str, Enum):
    NONE = "NONE"
    WIFI_PREFERRED = "WIFI_PREFERRED"
    EDGE_PREFERRED = "EDGE_PREFERRED"


class SliceTemplate(str, Enum):
    EMBB = "EMBB"
    AUTOMOTIVE = "AUTOMOTIVE"
    MIOT = "MIOT"


class SchedulingMode(str, Enum):
    TWO_LAYER = "TWO_LAYER"
    POOLED = "POOLED"


# Mbps carried by one PRB per slot, by mobility class.
DEFAULT_EFFICIENCY = {
    Mobility.STATIONARY: 1.0,
    Mobility.LOW: 0.8,
    Mobility.MEDIUM: 0.6,
    Mobility.HIGH: 0.4,
}


def is_plmn_id(value: str) -> bool:
    return isinstance(value, str) and bool(_PLMN_RE.match(value))


@dataclass(frozen=True, order=True)
class TenantId:
    kind: TenantKind
    value: str

    @classmethod
    def operator(cls, plmn: str) -> "TenantId":
        return cls(TenantKind.OPERATOR, plmn)

    @classmethod
    def service(cls, name: str) -> "TenantId":
        return cls(TenantKind.SERVICE, name)

    def __str__(self):
        return f"{self.kind.value}:{self.value}"


@dataclass(frozen=True)
class TimeSpec:
    start_slot: int
    duration_slots: int
    periodicity_slots: Optional[int] = None
    window_end_slot: Optional[int] = None

    @property
    def open_ended(self) -> bool:
        """Periodic with no window end: recurs forever."""
        return self.periodicity_slots is not None and self.window_end_slot is None


@dataclass(frozen=True)
class QosProfile:
    bearer: Bearer = Bearer.NON_GBR
    priority: int = 8
    delay_budget_ms: float = 100.0
    jitter_ms: float = 0.0
    loss_rate: float = 0.0


@dataclass(frozen=True)
class ResourceSpec:
    kind: ResourceKind
    prb_per_slot: Optional[int] = None
    rate_mbps: Optional[float] = None

    @classmethod
    def prbs(cls, n: int) -> "ResourceSpec":
        return cls(ResourceKind.PHYSICAL_PRB, prb_per_slot=n)

    @classmethod
    def rate(cls, mbps: float) -> "ResourceSpec":
        return cls(ResourceKind.DATA_RATE, rate_mbps=mbps)


@dataclass(frozen=True)
class VolumeDescriptor:
    file_size_mb: float
    deadline_slot: int


@dataclass(frozen=True)
class ServiceInfo:
    mobility: Mobility = Mobility.STATIONARY
    offloading_policy: OffloadingPolicy = OffloadingPolicy.NONE
    disruption_tolerance_slots: int = 0
    volume_descriptor: Optional[VolumeDescriptor] = None


@dataclass(frozen=True)
class SliceRequest:
    request_id: str
    tenant: TenantId
    resources: ResourceSpec
    time: TimeSpec
    qos: QosProfile = field(default_factory=QosProfile)
    service: ServiceInfo = field(default_factory=ServiceInfo)
    cells: Optional[tuple] = None
    template: Optional[SliceTemplate] = None


@dataclass(frozen=True)
class ValidatedRequest(SliceRequest):
    """A request that passed :func:`validate_request`."""


@dataclass(frozen=True)
class SliceGrant:
    slice_id: str
    request_id: str
    tenant: TenantId
    per_cell_prb: Mapping[str, int]
    time: TimeSpec
    qos: QosProfile
    mode: SchedulingMode = SchedulingMode.TWO_LAYER

    @property
    def cells(self):
        return sorted(self.per_cell_prb)

    @property
    def spare_eligible(self) -> bool:
        return self.qos.bearer is Bearer.NON_GBR

    def __hash__(self):
        return hash((self.slice_id, self.request_id))


def _fail(code, message, field_name):
    raise ValidationError(code, message, field=field_name)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _check_tenant(tenant):
    if not isinstance(tenant, TenantId):
        _fail("BAD_TENANT", "tenant missing", "tenant")
    if tenant.kind is TenantKind.OPERATOR and not is_plmn_id(tenant.value):
        _fail("BAD_TENANT", f"{tenant.value!r} is not a 5/6 digit PLMN-id", "tenant.value")
    if tenant.kind is TenantKind.SERVICE and not (isinstance(tenant.value, str) and tenant.value):
        _fail("BAD_TENANT", "empty service identifier", "tenant.value")


def _check_time(t: TimeSpec):
    if not _is_int(t.start_slot) or t.start_slot < 0:
        _fail("BAD_TIME_SPEC", "start_slot must be an integer >= 0", "time.start_slot")
    if not _is_int(t.duration_slots) or t.duration_slots <= 0:
        _fail("BAD_TIME_SPEC", "duration_slots must be > 0", "time.duration_slots")
    if t.periodicity_slots is not None:
        if not _is_int(t.periodicity_slots) or t.periodicity_slots <= t.duration_slots:
            _fail("BAD_TIME_SPEC", "periodicity must exceed duration", "time.periodicity_slots")
    if t.window_end_slot is not None:
        if not _is_int(t.window_end_slot) or t.window_end_slot < t.start_slot:
            _fail("BAD_TIME_SPEC", "window_end_slot before start_slot", "time.window_end_slot")


def _check_resources(r: ResourceSpec):
    if not isinstance(r, ResourceSpec):
        _fail("EMPTY_RESOURCES", "no resources", "resources")
    if r.kind is ResourceKind.PHYSICAL_PRB:
        ok = _is_int(r.prb_per_slot) and r.prb_per_slot > 0 and r.rate_mbps is None
        if not ok:
            _fail("EMPTY_RESOURCES", "prb_per_slot must be a positive integer", "resources.prb_per_slot")
    else:
        ok = _is_num(r.rate_mbps) and r.rate_mbps > 0 and r.prb_per_slot is None
        if not ok:
            _fail("EMPTY_RESOURCES", "rate_mbps must be positive", "resources.rate_mbps")


def _check_qos(q: QosProfile):
    if not _is_int(q.priority) or not 1 <= q.priority <= MAX_PRIORITY:
        _fail("BAD_QOS_RANGE", "priority outside 1..15", "qos.priority")
    if not _is_num(q.delay_budget_ms) or q.delay_budget_ms <= 0:
        _fail("BAD_QOS_RANGE", "delay budget must be positive", "qos.delay_budget_ms")
    if not _is_num(q.jitter_ms) or q.jitter_ms < 0:
        _fail("BAD_QOS_RANGE", "jitter must be non-negative", "qos.jitter_ms")
    if not _is_num(q.loss_rate) or not 0 <= q.loss_rate <= 1:
        _fail("BAD_QOS_RANGE", "loss rate outside [0, 1]", "qos.loss_rate")


def _check_service(s: ServiceInfo, start_slot: int):
    if not _is_int(s.disruption_tolerance_slots) or s.disruption_tolerance_slots < 0:
        _fail("BAD_SERVICE_INFO", "negative disruption tolerance", "service.disruption_tolerance_slots")
    vd = s.volume_descriptor
    if vd is not None:
        if not _is_num(vd.file_size_mb) or vd.file_size_mb <= 0:
            _fail("BAD_SERVICE_INFO", "file size must be positive", "service.volume_descriptor.file_size_mb")
        if not _is_int(vd.deadline_slot) or vd.deadline_slot <= start_slot:
            _fail("BAD_SERVICE_INFO", "deadline must follow start", "service.volume_descriptor.deadline_slot")


def validate_request(req: SliceRequest, topology) -> ValidatedRequest:
    """Check ``req`` against range rules and the deployed cells.

    ``topology`` is anything with a ``cells`` mapping keyed by cell id.
    Raises :class:`ValidationError` naming the first violated field.
    """
    if not isinstance(req.request_id, str) or not req.request_id:
        _fail("BAD_REQUEST_ID", "request_id must be a non-empty string", "request_id")
    _check_tenant(req.tenant)
    _check_resources(req.resources)
    _check_time(req.time)
    _check_qos(req.qos)
    _check_service(req.service, req.time.start_slot)
    if req.cells is not None:
        if len(req.cells) == 0:
            _fail("UNKNOWN_CELL", "explicit cell set is empty", "cells")
        for c in req.cells:
            if c not in topology.cells:
                _fail("UNKNOWN_CELL", f"cell {c!r} not deployed", "cells")
    if isinstance(req, ValidatedRequest):
        return req
    values = {f.name: getattr(req, f.name) for f in dataclasses.fields(SliceRequest)}
    if values["cells"] is not None:
        values["cells"] = tuple(values["cells"])
    return ValidatedRequest(**values)


def _exact(x) -> Fraction:
    # decimal reading of the float, so 0.1 means one tenth
    return Fraction(repr(x)) if isinstance(x, float) else Fraction(x)


def rate_to_prb(rate_mbps: float, mobility: Mobility, efficiency_table: Mapping = None) -> int:
    table = DEFAULT_EFFICIENCY if efficiency_table is None else efficiency_table
    return math.ceil(_exact(rate_mbps) / _exact(table[Mobility(mobility)]))


def volume_rate_mbps(volume: VolumeDescriptor, start_slot: int) -> float:
    """Rate that spreads the volume evenly between start and deadline."""
    seconds = (volume.deadline_slot - start_slot) * SLOT_SECONDS
    return volume.file_size_mb / seconds


def needed_prb(req: SliceRequest, efficiency_table: Mapping = None) -> int:
    """PRBs per slot per cell that ``req`` must reserve."""
    if req.resources.kind is ResourceKind.PHYSICAL_PRB:
        need = req.resources.prb_per_slot
    else:
        need = rate_to_prb(req.resources.rate_mbps, req.service.mobility, efficiency_table)
    vd = req.service.volume_descriptor
    if vd is not None:
        rate = volume_rate_mbps(vd, req.time.start_slot)
        need = max(need, rate_to_prb(rate, req.service.mobility, efficiency_table))
    return need


def active_intervals(time: TimeSpec, horizon_slot: int) -> list:
    """Half-open ``(start, end)`` intervals that begin at or before the horizon."""
    last = horizon_slot
    if time.window_end_slot is not None:
        last = min(last, time.window_end_slot)
    if time.start_slot > last:
        return []
    if time.periodicity_slots is None:
        return [(time.start_slot, time.start_slot + time.duration_slots)]
    period = time.periodicity_slots
    count = (last - time.start_slot) // period + 1
    return [
        (time.start_slot + k * period, time.start_slot + k * period + time.duration_slots)
        for k in range(count)
    ]


def covers(intervals: Sequence, slot: int) -> bool:
    return any(a <= slot < b for a, b in intervals)

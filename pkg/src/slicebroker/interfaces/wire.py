"""Newline-delimited JSON wire format and the body codecs for every message.

Each line is one object ``{"v": 1, "type": ..., "seq": n, "body": {...}}``
encoded canonically: keys sorted, no insignificant whitespace, UTF-8.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional

from ..broker import (Decision, LifecycleEvent, LifecycleKind, LogEntry, LogOp,
                      Outcome, RejectReason, SliceState)
from ..domain import (Bearer, Mobility, OffloadingPolicy, QosProfile, ResourceKind, ResourceSpec,
                      SchedulingMode, ServiceInfo, SliceGrant, SliceRequest, SliceTemplate,
                      TenantId, TenantKind, TimeSpec, ValidatedRequest, VolumeDescriptor)
from ..errors import ProtocolError
from ..telemetry import KpiReport, MeasurementRecord, SliceKpi

PROTOCOL_VERSION = 1


class MessageType(str, Enum):
    AUTH_REQ = "AUTH_REQ"
    AUTH_RESP = "AUTH_RESP"
    SLICE_REQ = "SLICE_REQ"
    SLICE_DECISION = "SLICE_DECISION"
    SLICE_RELEASE = "SLICE_RELEASE"
    KPI_REPORT = "KPI_REPORT"
    CONTEXT_QUERY = "CONTEXT_QUERY"
    CONTEXT_RESP = "CONTEXT_RESP"
    CHARGING_QUERY = "CHARGING_QUERY"
    CHARGING_RESP = "CHARGING_RESP"
    CONFIG_ITFN = "CONFIG_ITFN"
    CONFIG_ITFB = "CONFIG_ITFB"
    ERROR = "ERROR"


@dataclass(frozen=True)
class Message:
    type: MessageType
    seq: int
    body: Dict[str, Any] = field(default_factory=dict)
    v: int = PROTOCOL_VERSION


@dataclass(frozen=True)
class ChargingRecord:
    slice_id: str
    tenant: TenantId
    prb_slots_consumed: int
    qos_multiplier: float
    amount: float


@dataclass(frozen=True)
class UserContext:
    ue_id: str
    serving_cell: Optional[str]
    mobility: Mobility
    avg_rate_mbps: float


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def encode(msg: Message) -> bytes:
    obj = {"v": msg.v, "type": MessageType(msg.type).value, "seq": msg.seq, "body": msg.body}
    return (dumps(obj) + "\n").encode("utf-8")


def decode(line) -> Message:
    if isinstance(line, (bytes, bytearray)):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError("MALFORMED", "not UTF-8") from exc
    try:
        obj = json.loads(line)
    except ValueError as exc:
        raise ProtocolError("MALFORMED", "not JSON") from exc
    if not isinstance(obj, dict) or set(obj) != {"v", "type", "seq", "body"}:
        raise ProtocolError("MALFORMED", "expected keys v, type, seq, body")
    if obj["v"] != PROTOCOL_VERSION:
        raise ProtocolError("BAD_VERSION", str(obj["v"]))
    try:
        mtype = MessageType(obj["type"])
    except ValueError:
        raise ProtocolError("MALFORMED", f"unknown type {obj['type']!r}") from None
    if not isinstance(obj["seq"], int) or isinstance(obj["seq"], bool) or not isinstance(obj["body"], dict):
        raise ProtocolError("MALFORMED", "seq must be int and body an object")
    return Message(mtype, obj["seq"], obj["body"], obj["v"])


# -- body codecs ---------------------------------------------------------

def _opt(x, fn):
    return None if x is None else fn(x)


def tenant_to_wire(t: TenantId) -> dict:
    return {"kind": t.kind.value, "value": t.value}


def tenant_from_wire(d) -> TenantId:
    return TenantId(TenantKind(d["kind"]), d["value"])


def time_to_wire(t: TimeSpec) -> dict:
    return {"start_slot": t.start_slot, "duration_slots": t.duration_slots,
            "periodicity_slots": t.periodicity_slots, "window_end_slot": t.window_end_slot}


def time_from_wire(d) -> TimeSpec:
    return TimeSpec(d["start_slot"], d["duration_slots"], d.get("periodicity_slots"), d.get("window_end_slot"))


def qos_to_wire(q: QosProfile) -> dict:
    return {"bearer": q.bearer.value, "priority": q.priority, "delay_budget_ms": q.delay_budget_ms,
            "jitter_ms": q.jitter_ms, "loss_rate": q.loss_rate}


def qos_from_wire(d) -> QosProfile:
    return QosProfile(Bearer(d["bearer"]), d["priority"], d["delay_budget_ms"], d["jitter_ms"], d["loss_rate"])


def resources_to_wire(r: ResourceSpec) -> dict:
    return {"kind": r.kind.value, "prb_per_slot": r.prb_per_slot, "rate_mbps": r.rate_mbps}


def resources_from_wire(d) -> ResourceSpec:
    return ResourceSpec(ResourceKind(d["kind"]), d.get("prb_per_slot"), d.get("rate_mbps"))


def service_to_wire(s: ServiceInfo) -> dict:
    vd = s.volume_descriptor
    return {
        "mobility": s.mobility.value,
        "offloading_policy": s.offloading_policy.value,
        "disruption_tolerance_slots": s.disruption_tolerance_slots,
        "volume_descriptor": None if vd is None else {"file_size_mb": vd.file_size_mb,
                                                      "deadline_slot": vd.deadline_slot},
    }


def service_from_wire(d) -> ServiceInfo:
    vd = d.get("volume_descriptor")
    return ServiceInfo(
        Mobility(d.get("mobility", "STATIONARY")),
        OffloadingPolicy(d.get("offloading_policy", "NONE")),
        d.get("disruption_tolerance_slots", 0),
        None if vd is None else VolumeDescriptor(vd["file_size_mb"], vd["deadline_slot"]),
    )


def request_to_wire(r: SliceRequest) -> dict:
    return {
        "request_id": r.request_id,
        "tenant": tenant_to_wire(r.tenant),
        "resources": resources_to_wire(r.resources),
        "time": time_to_wire(r.time),
        "qos": qos_to_wire(r.qos),
        "service": service_to_wire(r.service),
        "cells": None if r.cells is None else list(r.cells),
        "template": _opt(r.template, lambda t: t.value),
    }


def request_from_wire(d, cls=SliceRequest) -> SliceRequest:
    """Decode a request body; missing qos/service fields take their defaults."""
    try:
        return cls(
            request_id=d["request_id"],
            tenant=tenant_from_wire(d["tenant"]),
            resources=resources_from_wire(d["resources"]),
            time=time_from_wire(d["time"]),
            qos=qos_from_wire({**qos_to_wire(QosProfile()), **d.get("qos", {})}),
            service=service_from_wire(d.get("service") or {}),
            cells=_opt(d.get("cells"), tuple),
            template=_opt(d.get("template"), SliceTemplate),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError("MALFORMED", f"bad slice request: {exc}") from exc


def grant_to_wire(g: SliceGrant) -> dict:
    return {
        "slice_id": g.slice_id,
        "request_id": g.request_id,
        "tenant": tenant_to_wire(g.tenant),
        "per_cell_prb": dict(g.per_cell_prb),
        "time": time_to_wire(g.time),
        "qos": qos_to_wire(g.qos),
        "mode": g.mode.value,
    }


def grant_from_wire(d) -> SliceGrant:
    return SliceGrant(d["slice_id"], d["request_id"], tenant_from_wire(d["tenant"]),
                      dict(d["per_cell_prb"]), time_from_wire(d["time"]), qos_from_wire(d["qos"]),
                      SchedulingMode(d["mode"]))


def decision_to_wire(dec: Decision) -> dict:
    return {
        "request_id": dec.request_id,
        "outcome": dec.outcome.value,
        "grant": _opt(dec.grant, grant_to_wire),
        "reason": _opt(dec.reason, lambda r: r.value),
        "detail": dec.detail,
    }


def decision_from_wire(d) -> Decision:
    return Decision(d["request_id"], Outcome(d["outcome"]), _opt(d.get("grant"), grant_from_wire),
                    _opt(d.get("reason"), RejectReason), d.get("detail", ""))


def record_to_wire(r: MeasurementRecord) -> dict:
    return {"slot": r.slot, "cell_id": r.cell_id, "slice_id": r.slice_id,
            "tenant": _opt(r.tenant, tenant_to_wire), "demanded_prb": r.demanded_prb,
            "quota_prb": r.quota_prb, "delivered_prb": r.delivered_prb,
            "deficit_prb": r.deficit_prb, "granted_prb": r.granted_prb}


def record_from_wire(d) -> MeasurementRecord:
    return MeasurementRecord(d["slot"], d["cell_id"], d["slice_id"], _opt(d["tenant"], tenant_from_wire),
                             d["demanded_prb"], d["quota_prb"], d["delivered_prb"], d["deficit_prb"],
                             d["granted_prb"])


_KPI_FIELDS = ("slice_id", "slots", "demanded_prb", "delivered_prb", "deficit_prb", "sla_events", "handovers")


def report_to_wire(rep: KpiReport) -> dict:
    return {
        "tenant": tenant_to_wire(rep.tenant),
        "range": [rep.range_start, rep.range_end],
        "slices": [{k: getattr(s, k) for k in _KPI_FIELDS} for s in rep.slices],
        "records": [record_to_wire(r) for r in rep.records],
    }


def report_from_wire(d) -> KpiReport:
    return KpiReport(tenant_from_wire(d["tenant"]), d["range"][0], d["range"][1],
                     tuple(SliceKpi(**{k: s[k] for k in _KPI_FIELDS}) for s in d["slices"]),
                     tuple(record_from_wire(r) for r in d["records"]))


def charging_to_wire(c: ChargingRecord) -> dict:
    return {"slice_id": c.slice_id, "tenant": tenant_to_wire(c.tenant),
            "prb_slots_consumed": c.prb_slots_consumed, "qos_multiplier": c.qos_multiplier,
            "amount": c.amount}


def charging_from_wire(d) -> ChargingRecord:
    return ChargingRecord(d["slice_id"], tenant_from_wire(d["tenant"]), d["prb_slots_consumed"],
                          d["qos_multiplier"], d["amount"])


def context_to_wire(c: UserContext) -> dict:
    return {"ue_id": c.ue_id, "serving_cell": c.serving_cell, "mobility": c.mobility.value,
            "avg_rate_mbps": c.avg_rate_mbps}


def context_from_wire(d) -> UserContext:
    return UserContext(d["ue_id"], d["serving_cell"], Mobility(d["mobility"]), d["avg_rate_mbps"])


def lifecycle_to_wire(e: LifecycleEvent) -> dict:
    return {"slot": e.slot, "slice_id": e.slice_id, "kind": e.kind.value, "state": e.state.value}


def lifecycle_from_wire(d) -> LifecycleEvent:
    return LifecycleEvent(d["slot"], d["slice_id"], LifecycleKind(d["kind"]), SliceState(d["state"]))


def log_entry_to_wire(e: LogEntry) -> dict:
    return {
        "seq": e.seq, "clock": e.clock, "op": e.op.value,
        "request": _opt(e.request, request_to_wire),
        "decision": _opt(e.decision, decision_to_wire),
        "slice_id": e.slice_id,
        "intervals": [list(iv) for iv in e.intervals],
    }


def log_entry_from_wire(d) -> LogEntry:
    return LogEntry(
        d["seq"], d["clock"], LogOp(d["op"]),
        _opt(d.get("request"), lambda r: request_from_wire(r, ValidatedRequest)),
        _opt(d.get("decision"), decision_from_wire),
        d.get("slice_id"),
        tuple(tuple(iv) for iv in d.get("intervals", [])),
    )

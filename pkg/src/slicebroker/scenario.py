"""Scenario configuration: parsing, validation and serialization.

Configs are JSON objects using the same grammar as the wire format (slice
requests are written exactly as in a ``SLICE_REQ`` body). ``schema`` must be
``1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

from .domain import (DEFAULT_CELL_CAPACITY, DEFAULT_EFFICIENCY, Bearer, Mobility,
                     SchedulingMode, SliceRequest, SliceTemplate, TenantKind,
                     is_plmn_id, validate_request)
from .errors import ConfigError, SliceBrokerError
from .interfaces import wire
from .interfaces.gateway import DEFAULT_MULTIPLIERS, Party
from .ransim import MAX_BROADCAST_PLMNS, Archetype, SharingMode
from .scheduler import SparePolicy

SCHEMA_VERSION = 1

# qos/service defaults for the three reference slice types
TEMPLATE_DEFAULTS = {
    SliceTemplate.EMBB: {
        "qos": {"bearer": "NON_GBR", "priority": 8, "delay_budget_ms": 100.0, "jitter_ms": 20.0, "loss_rate": 0.01},
        "service": {"mobility": "LOW"},
    },
    SliceTemplate.AUTOMOTIVE: {
        "qos": {"bearer": "GBR", "priority": 2, "delay_budget_ms": 10.0, "jitter_ms": 2.0, "loss_rate": 0.00001},
        "service": {"mobility": "HIGH"},
    },
    SliceTemplate.MIOT: {
        "qos": {"bearer": "NON_GBR", "priority": 12, "delay_budget_ms": 1000.0, "jitter_ms": 100.0, "loss_rate": 0.01},
        "service": {"mobility": "STATIONARY", "disruption_tolerance_slots": 60},
    },
}


@dataclass(frozen=True)
class CellSpec:
    cell_id: str
    capacity_prb_per_slot: int = DEFAULT_CELL_CAPACITY
    broadcast_plmns: Tuple[str, ...] = ()
    neighbors: Tuple[str, ...] = ()


@dataclass(frozen=True)
class OutageSpec:
    cell_id: str
    start_slot: int
    end_slot: int  # exclusive
    capacity_prb_per_slot: int


@dataclass(frozen=True)
class UeSpec:
    ue_id: str
    party: str
    home_plmn: str
    cell: str
    demand_prb_per_slot: int = 0
    mobility: Mobility = Mobility.STATIONARY
    request_id: Optional[str] = None


@dataclass(frozen=True)
class ScriptedRequest:
    slot: int
    party: str
    request: SliceRequest


@dataclass(frozen=True)
class ScriptedRelease:
    slot: int
    party: str
    request_id: str


@dataclass(frozen=True)
class ScriptedHandover:
    slot: int
    ue_id: str
    target: str


@dataclass(frozen=True)
class BackgroundSpec:
    day_length_slots: int = 86400
    default: Tuple[Tuple[int, float], ...] = ((0, 0.0),)
    cells: Dict[str, Tuple[Tuple[int, float], ...]] = field(default_factory=dict)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    archetype: Archetype = Archetype.CUSTOM
    sharing_mode: SharingMode = SharingMode.MOCN
    cells: Tuple[CellSpec, ...] = ()
    core_endpoints: Dict[str, str] = field(default_factory=dict)
    shared_mme: Optional[str] = None
    outages: Tuple[OutageSpec, ...] = ()
    parties: Tuple[Party, ...] = ()
    ues: Tuple[UeSpec, ...] = ()
    requests: Tuple[ScriptedRequest, ...] = ()
    releases: Tuple[ScriptedRelease, ...] = ()
    handovers: Tuple[ScriptedHandover, ...] = ()
    handover_prob: float = 0.0
    background: BackgroundSpec = field(default_factory=BackgroundSpec)
    mode: SchedulingMode = SchedulingMode.TWO_LAYER
    spare_policy: SparePolicy = SparePolicy.NONE
    forecast_window: int = 3
    default_background_fraction: float = 0.0
    multipliers: Dict[Bearer, float] = field(default_factory=lambda: dict(DEFAULT_MULTIPLIERS))
    efficiency: Dict[Mobility, float] = field(default_factory=lambda: dict(DEFAULT_EFFICIENCY))
    seed: int = 0
    horizon_slots: Optional[int] = None
    slots: int = 100
    slot_seconds: float = 1.0

    @property
    def effective_horizon(self) -> int:
        return self.horizon_slots if self.horizon_slots is not None else 7 * self.background.day_length_slots

    def party(self, name: str) -> Party:
        for p in self.parties:
            if p.name == name:
                return p
        raise KeyError(name)


# -- parsing ----------------------------------------------------------------

def _get(d, key, path, kind=None, default=...):
    if key not in d:
        if default is ...:
            raise ConfigError(message=f"missing {path}.{key}", field=f"{path}.{key}")
        return default
    v = d[key]
    if kind is not None and v is not None and not isinstance(v, kind):
        raise ConfigError(message=f"{path}.{key} has wrong type", field=f"{path}.{key}")
    return v


def _segments(raw, path):
    try:
        segs = tuple((int(a), float(m)) for a, m in raw)
    except (TypeError, ValueError):
        raise ConfigError(message=f"{path} must be [[slot_of_day, mean], ...]", field=path) from None
    if [a for a, _ in segs] != sorted({a for a, _ in segs}) or any(m < 0 for _, m in segs):
        raise ConfigError(message=f"{path} must be sorted with non-negative means", field=path)
    return segs


def _with_template(raw: dict) -> dict:
    tmpl = raw.get("template")
    if tmpl is None:
        return raw
    defaults = TEMPLATE_DEFAULTS[SliceTemplate(tmpl)]
    out = dict(raw)
    out["qos"] = {**defaults["qos"], **raw.get("qos", {})}
    out["service"] = {**defaults["service"], **(raw.get("service") or {})}
    return out


def parse_config(obj: dict) -> ScenarioConfig:
    """Build and validate a config from its JSON object form."""
    if not isinstance(obj, dict):
        raise ConfigError(message="config must be an object", field="$")
    if obj.get("schema") != SCHEMA_VERSION:
        raise ConfigError(message=f"schema must be {SCHEMA_VERSION}", field="schema")
    try:
        cfg = _parse(obj)
    except ConfigError:
        raise
    except SliceBrokerError as exc:
        raise ConfigError(message=str(exc), field=exc.field) from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(message=f"bad value: {exc}", field="$") from exc
    validate_config(cfg)
    return cfg


def _parse(obj) -> ScenarioConfig:
    topo = _get(obj, "topology", "$", dict)
    cells = tuple(
        CellSpec(_get(c, "cell_id", f"topology.cells[{i}]", str),
                 int(c.get("capacity_prb_per_slot", DEFAULT_CELL_CAPACITY)),
                 tuple(c.get("broadcast_plmns", ())), tuple(c.get("neighbors", ())))
        for i, c in enumerate(_get(topo, "cells", "topology", list))
    )
    outages = tuple(OutageSpec(o["cell_id"], int(o["start_slot"]), int(o["end_slot"]),
                               int(o["capacity_prb_per_slot"])) for o in obj.get("outages", ()))
    parties = tuple(Party(p["party"], p["secret"], wire.tenant_from_wire(p["tenant"]))
                    for p in obj.get("tenants", ()))
    ues = tuple(UeSpec(u["ue_id"], u["party"], u["home_plmn"], u["cell"],
                       int(u.get("demand_prb_per_slot", 0)), Mobility(u.get("mobility", "STATIONARY")),
                       u.get("request_id")) for u in obj.get("ues", ()))
    requests = []
    for i, r in enumerate(obj.get("requests", ())):
        path = f"requests[{i}]"
        body = _with_template(_get(r, "request", path, dict))
        requests.append(ScriptedRequest(int(_get(r, "slot", path)), _get(r, "party", path, str),
                                        wire.request_from_wire(body)))
    releases = tuple(ScriptedRelease(int(r["slot"]), r["party"], r["request_id"]) for r in obj.get("releases", ()))
    handovers = tuple(ScriptedHandover(int(h["slot"]), h["ue_id"], h["target"]) for h in obj.get("handovers", ()))
    bg = obj.get("background", {})
    background = BackgroundSpec(
        int(bg.get("day_length_slots", 86400)),
        _segments(bg.get("default", [[0, 0.0]]), "background.default"),
        {c: _segments(s, f"background.cells.{c}") for c, s in sorted(bg.get("cells", {}).items())},
    )
    sched = obj.get("scheduler", {})
    fc = obj.get("forecast", {})
    return ScenarioConfig(
        name=obj.get("name", "scenario"),
        archetype=Archetype(obj.get("archetype", "CUSTOM")),
        sharing_mode=SharingMode(_get(topo, "sharing_mode", "topology", str)),
        cells=cells,
        core_endpoints=dict(sorted(topo.get("core_endpoints", {}).items())),
        shared_mme=topo.get("shared_mme"),
        outages=outages,
        parties=parties,
        ues=ues,
        requests=tuple(requests),
        releases=releases,
        handovers=handovers,
        handover_prob=float(obj.get("mobility", {}).get("handover_prob", 0.0)),
        background=background,
        mode=SchedulingMode(sched.get("mode", "TWO_LAYER")),
        spare_policy=SparePolicy(sched.get("spare_policy", "NONE")),
        forecast_window=int(fc.get("window", 3)),
        default_background_fraction=float(fc.get("default_fraction", 0.0)),
        multipliers={Bearer(k): float(v) for k, v in sorted(obj.get("charging", {"GBR": 1.5, "NON_GBR": 1.0}).items())},
        efficiency={Mobility(k): float(v) for k, v in sorted(
            obj.get("efficiency", {m.value: e for m, e in DEFAULT_EFFICIENCY.items()}).items())},
        seed=int(obj.get("seed", 0)),
        horizon_slots=None if obj.get("horizon_slots") is None else int(obj["horizon_slots"]),
        slots=int(obj.get("slots", 100)),
        slot_seconds=float(obj.get("slot_seconds", 1.0)),
    )


def _bad(message, path):
    raise ConfigError(message=message, field=path)


def validate_config(cfg: ScenarioConfig):
    """Domain and archetype checks; raises :class:`ConfigError` with a field path."""
    ids = [c.cell_id for c in cfg.cells]
    if len(set(ids)) != len(ids):
        _bad("duplicate cell ids", "topology.cells")
    for i, c in enumerate(cfg.cells):
        path = f"topology.cells[{i}]"
        if c.capacity_prb_per_slot <= 0:
            _bad("capacity must be positive", f"{path}.capacity_prb_per_slot")
        if len(c.broadcast_plmns) > MAX_BROADCAST_PLMNS:
            _bad(f"at most {MAX_BROADCAST_PLMNS} PLMNs per cell", f"{path}.broadcast_plmns")
        if len(set(c.broadcast_plmns)) != len(c.broadcast_plmns):
            _bad("duplicate PLMN", f"{path}.broadcast_plmns")
        for p in c.broadcast_plmns:
            if not is_plmn_id(p):
                _bad(f"{p!r} is not a PLMN-id", f"{path}.broadcast_plmns")
        for n in c.neighbors:
            if n not in ids:
                _bad(f"unknown neighbor {n}", f"{path}.neighbors")
    plmns = sorted({p for c in cfg.cells for p in c.broadcast_plmns})
    if cfg.sharing_mode is SharingMode.MOCN:
        for p in plmns:
            if p not in cfg.core_endpoints:
                _bad(f"no core endpoint for {p}", "topology.core_endpoints")
        used = [cfg.core_endpoints[p] for p in plmns]
        if len(set(used)) != len(used):
            _bad("MOCN operators need distinct core endpoints", "topology.core_endpoints")
    elif not cfg.shared_mme:
        _bad("GWCN needs a shared MME", "topology.shared_mme")

    _check_archetype(cfg, plmns)

    for i, o in enumerate(cfg.outages):
        path = f"outages[{i}]"
        cap = {c.cell_id: c.capacity_prb_per_slot for c in cfg.cells}.get(o.cell_id)
        if cap is None:
            _bad(f"unknown cell {o.cell_id}", f"{path}.cell_id")
        if not 0 <= o.capacity_prb_per_slot <= cap:
            _bad("outage capacity must be within [0, nominal]", f"{path}.capacity_prb_per_slot")
        if o.end_slot <= o.start_slot:
            _bad("empty outage window", f"{path}.end_slot")

    names = [p.name for p in cfg.parties]
    if len(set(names)) != len(names):
        _bad("duplicate party", "tenants")
    services = [p.tenant.value for p in cfg.parties if p.tenant.kind is TenantKind.SERVICE]
    if len(set(services)) != len(services):
        _bad("service identifiers must be unique", "tenants")
    for i, p in enumerate(cfg.parties):
        if p.tenant.kind is TenantKind.OPERATOR and not is_plmn_id(p.tenant.value):
            _bad("operator tenants carry a PLMN-id", f"tenants[{i}].tenant")
        if p.tenant.kind is TenantKind.SERVICE and not p.tenant.value:
            _bad("empty service identifier", f"tenants[{i}].tenant")

    ue_ids = [u.ue_id for u in cfg.ues]
    if len(set(ue_ids)) != len(ue_ids):
        _bad("duplicate UE id", "ues")
    cell_plmns = {c.cell_id: c.broadcast_plmns for c in cfg.cells}
    for i, u in enumerate(cfg.ues):
        if u.party not in names:
            _bad(f"unknown party {u.party}", f"ues[{i}].party")
        if u.cell not in cell_plmns:
            _bad(f"unknown cell {u.cell}", f"ues[{i}].cell")
        if u.home_plmn not in cell_plmns[u.cell]:
            _bad(f"{u.cell} does not broadcast {u.home_plmn}", f"ues[{i}].home_plmn")

    class _Cells:
        cells = dict.fromkeys(ids)

    seen = set()
    for i, r in enumerate(cfg.requests):
        path = f"requests[{i}]"
        if r.party not in names:
            _bad(f"unknown party {r.party}", f"{path}.party")
        if r.request.request_id in seen:
            _bad("duplicate request_id", f"{path}.request.request_id")
        seen.add(r.request.request_id)
        if r.slot < 0 or r.slot > r.request.time.start_slot:
            _bad("request must be submitted at or before its start slot", f"{path}.slot")
        try:
            validate_request(r.request, _Cells)
        except SliceBrokerError as exc:
            _bad(str(exc), f"{path}.request.{exc.field}")
    for i, r in enumerate(cfg.releases):
        if r.request_id not in seen:
            _bad(f"unknown request {r.request_id}", f"releases[{i}].request_id")
    for i, h in enumerate(cfg.handovers):
        if h.ue_id not in ue_ids:
            _bad(f"unknown UE {h.ue_id}", f"handovers[{i}].ue_id")
    if not 0 <= cfg.handover_prob <= 1:
        _bad("handover_prob must be in [0, 1]", "mobility.handover_prob")
    if cfg.background.day_length_slots <= 0:
        _bad("day length must be positive", "background.day_length_slots")
    for c in cfg.background.cells:
        if c not in cell_plmns:
            _bad(f"unknown cell {c}", f"background.cells.{c}")
    if cfg.forecast_window < 1:
        _bad("forecast window must be >= 1", "forecast.window")
    if any(v <= 0 for v in cfg.efficiency.values()) or set(cfg.efficiency) != set(Mobility):
        _bad("efficiency needs a positive entry per mobility class", "efficiency")
    if cfg.effective_horizon <= 0:
        _bad("horizon must be positive", "horizon_slots")
    if cfg.slots < 0:
        _bad("slots must be >= 0", "slots")
    return cfg


def _check_archetype(cfg: ScenarioConfig, plmns):
    a = cfg.archetype
    counts = [len(c.broadcast_plmns) for c in cfg.cells]
    if a is Archetype.MULTI_CORE_SHARED_RAN:
        if cfg.sharing_mode is not SharingMode.MOCN or not cfg.cells or min(counts) < 2:
            _bad("multiple core networks sharing a RAN needs MOCN with >= 2 PLMNs per shared cell", "archetype")
    elif a is Archetype.COVERAGE_COLLABORATION:
        if len(plmns) < 2 or len(cfg.cells) < 2:
            _bad("coverage collaboration needs >= 2 operators and >= 2 cells", "archetype")
    elif a is Archetype.REGIONAL_COVERAGE_SHARING:
        if not any(n >= 2 for n in counts) or not any(n == 1 for n in counts):
            _bad("regional sharing needs shared (>= 2 PLMN) and unshared (1 PLMN) cells", "archetype")
    elif a is Archetype.COMMON_SPECTRUM_SHARING:
        if not cfg.cells or min(counts) < 2:
            _bad("common spectrum sharing needs >= 2 PLMNs on every cell", "archetype")
    elif a is Archetype.SHARED_CORE_MULTI_RAN:
        if cfg.sharing_mode is not SharingMode.GWCN or len(plmns) < 2 or any(n != 1 for n in counts):
            _bad("shared core needs GWCN and single-operator cells from >= 2 operators", "archetype")


# -- serialization ----------------------------------------------------------

def config_to_dict(cfg: ScenarioConfig) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "name": cfg.name,
        "archetype": cfg.archetype.value,
        "topology": {
            "sharing_mode": cfg.sharing_mode.value,
            "cells": [{"cell_id": c.cell_id, "capacity_prb_per_slot": c.capacity_prb_per_slot,
                       "broadcast_plmns": list(c.broadcast_plmns), "neighbors": list(c.neighbors)}
                      for c in cfg.cells],
            "core_endpoints": dict(cfg.core_endpoints),
            "shared_mme": cfg.shared_mme,
        },
        "outages": [{"cell_id": o.cell_id, "start_slot": o.start_slot, "end_slot": o.end_slot,
                     "capacity_prb_per_slot": o.capacity_prb_per_slot} for o in cfg.outages],
        "tenants": [{"party": p.name, "secret": p.secret, "tenant": wire.tenant_to_wire(p.tenant)}
                    for p in cfg.parties],
        "ues": [{"ue_id": u.ue_id, "party": u.party, "home_plmn": u.home_plmn, "cell": u.cell,
                 "demand_prb_per_slot": u.demand_prb_per_slot, "mobility": u.mobility.value,
                 "request_id": u.request_id} for u in cfg.ues],
        "requests": [{"slot": r.slot, "party": r.party, "request": wire.request_to_wire(r.request)}
                     for r in cfg.requests],
        "releases": [{"slot": r.slot, "party": r.party, "request_id": r.request_id} for r in cfg.releases],
        "handovers": [{"slot": h.slot, "ue_id": h.ue_id, "target": h.target} for h in cfg.handovers],
        "mobility": {"handover_prob": cfg.handover_prob},
        "background": {
            "day_length_slots": cfg.background.day_length_slots,
            "default": [list(s) for s in cfg.background.default],
            "cells": {c: [list(s) for s in segs] for c, segs in cfg.background.cells.items()},
        },
        "scheduler": {"mode": cfg.mode.value, "spare_policy": cfg.spare_policy.value},
        "forecast": {"window": cfg.forecast_window, "default_fraction": cfg.default_background_fraction},
        "charging": {k.value: v for k, v in cfg.multipliers.items()},
        "efficiency": {k.value: v for k, v in cfg.efficiency.items()},
        "seed": cfg.seed,
        "horizon_slots": cfg.horizon_slots,
        "slots": cfg.slots,
        "slot_seconds": cfg.slot_seconds,
    }


def dumps_config(cfg: ScenarioConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except ValueError as exc:
        raise ConfigError(message=f"{path}: not valid JSON ({exc})", field="$") from exc
    return parse_config(obj)


BUNDLED_DIR = Path(__file__).with_name("scenarios")


def bundled(name: str) -> Path:
    """Path of a scenario shipped with the package, e.g. ``three-slices``."""
    p = BUNDLED_DIR / f"{name}.json"
    if not p.exists():
        raise FileNotFoundError(p)
    return p


def with_overrides(cfg: ScenarioConfig, **changes) -> ScenarioConfig:
    return validate_config(replace(cfg, **changes))

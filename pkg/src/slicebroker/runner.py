"""Scenario runner: wires RAN model, broker, telemetry and gateway into one
event loop and writes the run artifacts."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import random
from collections import Counter
from pathlib import Path
from typing import Dict, List, Optional

from .broker import SliceBroker, replay
from .errors import InvariantViolation, TopologyError
from .interfaces import southbound, wire
from .interfaces.gateway import BrokerGateway, Connection
from .interfaces.wire import Message, MessageType
from .ransim import (BackgroundProfile, BackgroundTraffic, CellModel, SharedRan, Topology,
                     UeModel)
from .scenario import ScenarioConfig
from .telemetry import TelemetryStore, detect_sla_violations

METRICS_COLUMNS = ["slot", "cell", "slice", "tenant", "demanded", "quota", "delivered", "deficit"]

# same-slot events are ordered by (rank, insertion sequence)
EVENT_RANK = {
    "RELEASE": 0,
    "DECISION": 1,
    "LIFECYCLE": 2,
    "CONFIG": 3,
    "ATTACH": 4,
    "HANDOVER": 5,
    "HANDOVER_REJECTED": 5,
    "MEASURE": 6,
    "UE_ALLOC": 7,
    "SLA": 8,
}


class EventLog:
    """Append-only event log, buffered per slot and flushed in rank order."""

    def __init__(self, sink=None):
        self.sink = sink
        self.records: List[dict] = []
        self._pending: List[tuple] = []
        self._seq = 0

    def emit(self, slot: int, kind: str, **fields):
        self._pending.append((EVENT_RANK[kind], self._seq, {"slot": slot, "kind": kind, **fields}))
        self._seq += 1

    def flush(self):
        for _, _, rec in sorted(self._pending, key=lambda x: (x[0], x[1])):
            self.records.append(rec)
            if self.sink is not None:
                self.sink.write(wire.dumps(rec) + "\n")
        self._pending.clear()


def build_topology(cfg: ScenarioConfig) -> Topology:
    cells = {
        c.cell_id: CellModel(c.cell_id, c.capacity_prb_per_slot, list(c.broadcast_plmns), list(c.neighbors))
        for c in cfg.cells
    }
    for o in cfg.outages:
        for t in range(o.start_slot, o.end_slot):
            cells[o.cell_id].outage_schedule[t] = o.capacity_prb_per_slot
    return Topology(cfg.sharing_mode, cells, dict(cfg.core_endpoints), cfg.shared_mme, cfg.archetype).validate()


def _tenant_str(t) -> str:
    return "" if t is None else str(t)


class World:
    """Everything one scenario run owns. Single writer: only :meth:`step`
    and the gateway (serialized by the caller) mutate it."""

    def __init__(self, cfg: ScenarioConfig, out_dir: Optional[Path] = None):
        self.cfg = cfg
        self.topology = build_topology(cfg)
        day = cfg.background.day_length_slots
        caps = {c: m.capacity_prb_per_slot for c, m in self.topology.cells.items()}
        self.telemetry = TelemetryStore(caps, day, cfg.default_background_fraction)
        bg = BackgroundTraffic(
            {c: BackgroundProfile(s) for c, s in cfg.background.cells.items()},
            seed=cfg.seed, day_length_slots=day, default=BackgroundProfile(cfg.background.default))
        self.ran = SharedRan(self.topology, bg, cfg.mode, cfg.spare_policy, cfg.efficiency)
        self.broker = SliceBroker(self.topology, forecaster=self.forecast,
                                  horizon_slots=cfg.effective_horizon, mode=cfg.mode,
                                  efficiency_table=cfg.efficiency, ue_locations=self.ran.ue_locations)
        self.gateway = BrokerGateway(self.broker, cfg.parties, self.telemetry, self.ran,
                                     cfg.multipliers, on_decision=self._bind)
        for p in cfg.parties:
            self.telemetry.register_tenant(p.tenant)
        self.rng = random.Random(cfg.seed)
        self.slot = -1
        self.decisions = []
        self.slice_of_request: Dict[str, str] = {}
        self.sla_events = []
        self.metrics_rows: List[list] = []

        self.out_dir = Path(out_dir) if out_dir is not None else None
        self._files = {}
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            for name in ("events.ndjson", "decisions.ndjson", "metrics.csv"):
                self._files[name] = open(self.out_dir / name, "w", encoding="utf-8", newline="")
            self._metrics_writer = csv.writer(self._files["metrics.csv"], lineterminator="\n")
            self._metrics_writer.writerow(METRICS_COLUMNS)
        self.events = EventLog(self._files.get("events.ndjson"))
        self._logged = 0

        self._loopback: Dict[str, Connection] = {}
        self._seq = 0
        for u in cfg.ues:
            party = cfg.party(u.party)
            ue = self.ran.add_ue(UeModel(u.ue_id, party.tenant, u.home_plmn,
                                         demand_prb_per_slot=u.demand_prb_per_slot, mobility=u.mobility))
            res = self.ran.attach(ue.ue_id, u.cell)
            self.events.emit(0, "ATTACH", ue=ue.ue_id, cell=res.cell_id, core=res.core_endpoint,
                             tenant=str(ue.tenant))

    # -- plumbing ----------------------------------------------------------

    def forecast(self, cell: str, slot: int) -> float:
        return self.telemetry.forecast_background(cell, slot % self.cfg.background.day_length_slots,
                                                  self.cfg.forecast_window)

    def _bind(self, decision):
        self.decisions.append(decision)
        if not decision.granted:
            return
        g = decision.grant
        self.slice_of_request[g.request_id] = g.slice_id
        by_party = {p.name: p.tenant for p in self.cfg.parties}
        for u in self.cfg.ues:
            if u.request_id == g.request_id and by_party[u.party] == g.tenant:
                self.ran.ues[u.ue_id].slice_id = g.slice_id

    def connection(self, party: str) -> Connection:
        """Authenticated loopback connection for a scripted party."""
        conn = self._loopback.get(party)
        if conn is None:
            p = self.cfg.party(party)
            conn = self.gateway.connect()
            self._roundtrip(conn, Message(MessageType.AUTH_REQ, 0, {"party": p.name, "secret": p.secret}))
            self._loopback[party] = conn
        return conn

    def _roundtrip(self, conn: Connection, msg: Message) -> Message:
        self._seq += 1
        msg = Message(msg.type, self._seq, msg.body)
        return wire.decode(conn.handle_line(wire.encode(msg)))

    # -- event loop --------------------------------------------------------

    def step(self):
        slot = self.slot + 1
        cfg = self.cfg

        for r in (r for r in cfg.releases if r.slot == slot):
            sid = self.slice_of_request.get(r.request_id)
            if sid is None:
                self.events.emit(slot, "RELEASE", request_id=r.request_id, result="NOT_GRANTED")
                continue
            resp = self._roundtrip(self.connection(r.party), Message(MessageType.SLICE_RELEASE, 0, {"slice_id": sid}))
            self.events.emit(slot, "RELEASE", request_id=r.request_id, slice_id=sid,
                             result=resp.body.get("state", resp.body.get("code")))

        for r in (r for r in cfg.requests if r.slot == slot):
            resp = self._roundtrip(self.connection(r.party),
                                   Message(MessageType.SLICE_REQ, 0, {"request": wire.request_to_wire(r.request)}))
            if resp.type is MessageType.SLICE_DECISION:
                d = wire.decision_from_wire(resp.body["decision"])
                self.events.emit(slot, "DECISION", request_id=d.request_id, outcome=d.outcome.value,
                                 slice_id=d.grant.slice_id if d.grant else None,
                                 reason=d.reason.value if d.reason else None,
                                 cells=d.grant.cells if d.grant else [])
            else:
                self.events.emit(slot, "DECISION", request_id=r.request.request_id, outcome="ERROR",
                                 reason=resp.body.get("code"))

        self.advance(slot)

    def advance(self, slot: int):
        """Tick the broker and run the RAN for ``slot``."""
        events, pushes = self.broker.tick(slot)
        for e in events:
            self.events.emit(slot, "LIFECYCLE", slice_id=e.slice_id, action=e.kind.value,
                             state=e.state.value, at=e.slot)
        for m in southbound.render(pushes):
            self.events.emit(slot, "CONFIG", message=wire.encode(m).decode("utf-8").strip())

        self._mobility(slot)

        outcome = self.ran.step(slot, self.broker.active_grants(slot))
        self.telemetry.ingest(outcome.records)
        sla = detect_sla_violations(outcome)
        self.sla_events.extend(sla)
        for r in outcome.records:
            row = [slot, r.cell_id, r.slice_id, _tenant_str(r.tenant), r.demanded_prb,
                   r.quota_prb, r.delivered_prb, r.deficit_prb]
            self.metrics_rows.append(row)
            if self.out_dir is not None:
                self._metrics_writer.writerow(row)
            rec = wire.record_to_wire(r)
            del rec["slot"]
            self.events.emit(slot, "MEASURE", **rec)
        for ue_id in sorted(self.ran.ues):
            if self.ran.ues[ue_id].attached:
                self.events.emit(slot, "UE_ALLOC", ue=ue_id, cell=self.ran.ues[ue_id].serving_cell,
                                 prb=outcome.ue_alloc.get(ue_id, 0))
        for e in sla:
            self.events.emit(slot, "SLA", slice_id=e.slice_id, cell=e.cell_id,
                             tenant=str(e.tenant), deficit=e.deficit_prb)

        self.check_invariants()
        self.slot = slot
        self.events.flush()
        self._flush_decisions()

    def _mobility(self, slot: int):
        moves = [(h.ue_id, h.target) for h in self.cfg.handovers if h.slot == slot]
        if self.cfg.handover_prob > 0:
            for ue_id in sorted(self.ran.ues):
                ue = self.ran.ues[ue_id]
                nbrs = sorted(self.topology.cells[ue.serving_cell].neighbors)
                if nbrs and self.rng.random() < self.cfg.handover_prob:
                    moves.append((ue_id, self.rng.choice(nbrs)))
        for ue_id, target in moves:
            ue = self.ran.ues[ue_id]
            try:
                res = self.ran.handover(ue_id, target)
            except TopologyError as exc:
                self.events.emit(slot, "HANDOVER_REJECTED", ue=ue_id, target=target, code=exc.code)
                continue
            if ue.slice_id is not None:
                self.telemetry.record_handover(slot, ue.slice_id, ue.tenant)
            self.events.emit(slot, "HANDOVER", ue=ue_id, source=res.source_cell, target=res.target_cell,
                             core=res.core_endpoint)

    def check_invariants(self):
        caps = {c: m.capacity_prb_per_slot for c, m in self.topology.cells.items()}
        self.broker.registry.check_capacity(caps)
        for ue in self.ran.ues.values():
            if ue.attached and ue.home_plmn not in self.topology.cells[ue.serving_cell].broadcast_plmns:
                raise InvariantViolation(message=f"{ue.ue_id} served by a cell not broadcasting {ue.home_plmn}")

    def _flush_decisions(self):
        f = self._files.get("decisions.ndjson")
        log = self.broker.log
        if f is not None:
            for e in log[self._logged:]:
                f.write(wire.dumps(wire.log_entry_to_wire(e)) + "\n")
        self._logged = len(log)
        for f in self._files.values():
            f.flush()

    def run(self, slots: int = None):
        for _ in range(self.cfg.slots if slots is None else slots):
            self.step()
        return self

    # -- results -----------------------------------------------------------

    def charging(self) -> List[wire.ChargingRecord]:
        out = []
        for p in self.cfg.parties:
            session = self.connection(p.name).session
            out.extend(self.gateway.fetch_charging(session, (0, self.slot + 1)))
        return sorted(out, key=lambda c: c.slice_id)

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        w.writerows(self.metrics_rows)
        return buf.getvalue()

    def summary(self) -> dict:
        grants = [d.grant for d in self.decisions if d.granted]
        rejections = Counter(d.reason.value for d in self.decisions if not d.granted)
        snap = self.broker.registry.snapshot()
        return {
            "scenario": self.cfg.name,
            "archetype": self.cfg.archetype.value,
            "slots": self.slot + 1,
            "grants": [{"slice_id": g.slice_id, "request_id": g.request_id, "tenant": str(g.tenant),
                        "cells": g.cells, "prb": dict(g.per_cell_prb)} for g in grants],
            "rejections": dict(sorted(rejections.items())),
            "rejected": [{"request_id": d.request_id, "reason": d.reason.value}
                         for d in self.decisions if not d.granted],
            "sla_events": len(self.sla_events),
            "total_deficit": sum(e.deficit_prb for e in self.sla_events),
            "registry_sha256": hashlib.sha256(wire.dumps(snap).encode()).hexdigest(),
        }

    def finish(self) -> dict:
        """Close the decision log and write the remaining artifacts."""
        self.events.flush()
        self.broker.close()
        self._flush_decisions()
        summary = self.summary()
        if self.out_dir is not None:
            with open(self.out_dir / "charging.ndjson", "w", encoding="utf-8") as f:
                for c in self.charging():
                    f.write(wire.dumps(wire.charging_to_wire(c)) + "\n")
            (self.out_dir / "registry.json").write_text(
                wire.dumps(self.broker.registry.snapshot()) + "\n", encoding="utf-8")
            (self.out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                                       encoding="utf-8")
        for f in self._files.values():
            f.close()
        self._files.clear()
        return summary


def load_decision_log(path) -> list:
    with open(path, encoding="utf-8") as f:
        return [wire.log_entry_from_wire(json.loads(line)) for line in f if line.strip()]


def replay_file(path) -> SliceBroker:
    return replay(load_decision_log(path))

"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import csv
import io
import json
import random
import time
from collections import defaultdict
from dataclasses import replace

import pytest

import gen
import oracles
from slicebroker.broker import LifecycleKind, SliceBroker
from slicebroker.domain import ResourceSpec, SliceRequest, TenantId, TimeSpec
from slicebroker.errors import ConfigError, TopologyError
from slicebroker.interfaces import wire
from slicebroker.interfaces.wire import Message, MessageType
from slicebroker.ransim import (MAX_BROADCAST_PLMNS, CellModel, SharingMode, Topology, UeModel,
                                add_operator, attach, handover)
from slicebroker.runner import World, replay_file
from slicebroker.scenario import bundled, load_config, parse_config
from slicebroker.telemetry import BACKGROUND


def run_world(obj, out_dir=None):
    world = World(parse_config(obj) if isinstance(obj, dict) else obj, out_dir)
    world.run()
    return world


def test_ac1_admission_matches_oracle(criterion):
    t0 = time.perf_counter()
    n, mismatches, granted = 1200, 0, 0
    for seed in range(10_000, 10_000 + n):
        got, want = gen.admission_instance(seed)
        mismatches += got != want
        granted += sum(g[0] == "GRANTED" for g in got)
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 60
    criterion("AC1 admission oracle", ok,
              f"{n} instances, {granted} grants, {mismatches} mismatches, {elapsed:.1f}s (< 60s)")
    assert ok


@pytest.mark.parametrize("mode", ["TWO_LAYER", "POOLED"])
def test_ac2_capacity_conservation(criterion, mode):
    rng = random.Random(2 if mode == "POOLED" else 1)
    samples = violations = 0
    while samples < 10_000:
        world = run_world(gen.scenario(rng, mode=mode))
        used = defaultdict(int)
        for slot, cell, _sid, _t, _dem, _q, delivered, _d in world.metrics_rows:
            used[(slot, cell)] += delivered
        for (slot, cell), total in used.items():
            samples += 1
            violations += total > world.topology.cells[cell].effective_capacity(slot)
    ok = violations == 0
    criterion(f"AC2 capacity conservation {mode}", ok, f"{samples} (cell, slot) samples, {violations} over capacity")
    assert ok


def _rows_of(world, tenant):
    return [r for r in world.metrics_rows if r[3] == tenant]


def _allocs_of(world, ues):
    return [(e["slot"], e["ue"], e["prb"]) for e in world.events.records if e["kind"] == "UE_ALLOC" and e["ue"] in ues]


def _double(cfg, party):
    return replace(cfg, ues=tuple(replace(u, demand_prb_per_slot=2 * u.demand_prb_per_slot) if u.party == party else u
                                  for u in cfg.ues))


def test_ac3_slice_isolation(criterion):
    cases = []
    cfg = load_config(bundled("three-slices"))
    cases.append((cfg, "auto-oem", "mvno-blue"))
    rng = random.Random(3)
    for _ in range(10):
        obj = gen.scenario(rng)
        obj["scheduler"] = {"mode": "TWO_LAYER", "spare_policy": "NONE"}
        c = parse_config(obj)
        a, b = rng.sample([p.name for p in c.parties], 2)
        cases.append((c, a, b))
    diffs = 0
    rows = 0
    for c, a, b in cases:
        tenant_a = str(c.party(a).tenant)
        ues_a = {u.ue_id for u in c.ues if u.party == a}
        base, doubled = run_world(c), run_world(_double(c, b))
        ra, rb = _rows_of(base, tenant_a), _rows_of(doubled, tenant_a)
        rows += len(ra)
        diffs += ra != rb or _allocs_of(base, ues_a) != _allocs_of(doubled, ues_a)
    ok = diffs == 0 and rows > 0
    criterion("AC3 slice isolation", ok, f"{len(cases)} scenarios, {rows} rows of tenant A compared, {diffs} differ")
    assert ok


def _probe(world, party):
    """Everything a party can read; returns the number of foreign items seen."""
    p = world.cfg.party(party)
    conn = world.connection(party)
    me = wire.tenant_to_wire(p.tenant)
    mine = {sid for sid, g in world.broker.registry.grants.items() if g.tenant == p.tenant}
    my_ues = {u for u, ue in world.ran.ues.items() if ue.tenant == p.tenant}
    foreign = 0
    seq = iter(range(1000, 2000))

    def send(mtype, body):
        return wire.decode(conn.handle_line(wire.encode(Message(mtype, next(seq), body))))

    if p.tenant.kind.value == "OPERATOR":
        rep = send(MessageType.KPI_REPORT, {}).body["report"]
        foreign += rep["tenant"] != me
        foreign += sum(s["slice_id"] not in mine for s in rep["slices"])
        foreign += sum(r["tenant"] != me or r["slice_id"] not in mine for r in rep["records"])
    else:
        foreign += send(MessageType.KPI_REPORT, {}).body.get("code") != "SCOPE_VIOLATION"
    ctx = send(MessageType.CONTEXT_QUERY, {}).body["contexts"]
    foreign += sum(c["ue_id"] not in my_ues for c in ctx)
    for rec in send(MessageType.CHARGING_QUERY, {}).body["records"]:
        foreign += rec["tenant"] != me or rec["slice_id"] not in mine
    # probing foreign objects must reveal nothing
    for ue_id in sorted(set(world.ran.ues) - my_ues)[:3]:
        foreign += send(MessageType.CONTEXT_QUERY, {"ue_ids": [ue_id]}).body.get("code") != "SCOPE_VIOLATION"
    for sid in sorted(set(world.broker.registry.grants) - mine)[:3]:
        foreign += send(MessageType.SLICE_RELEASE, {"slice_id": sid}).body.get("code") != "UNKNOWN_SLICE"
    return foreign


def test_ac4_privacy_filtering(criterion):
    rng = random.Random(4)
    leaks = probes = 0
    for _ in range(100):
        world = run_world(gen.scenario(rng, slots=30))
        for p in world.cfg.parties:
            leaks += _probe(world, p.name)
            probes += 1
    ok = leaks == 0
    criterion("AC4 privacy filtering", ok, f"100 runs, {probes} tenant probes, {leaks} foreign records")
    assert ok


def test_ac5_six_plmn_limit(criterion):
    rng = random.Random(5)
    refused = cells_tried = 0
    for _ in range(200):
        topo = Topology(SharingMode.MOCN, {f"C{i}": CellModel(f"C{i}") for i in range(rng.randint(1, 4))})
        for cid in topo.cells:
            for k in range(rng.randint(0, MAX_BROADCAST_PLMNS)):
                add_operator(topo, cid, f"2{k:04d}")
            while len(topo.cells[cid].broadcast_plmns) < MAX_BROADCAST_PLMNS:
                add_operator(topo, cid, f"3{len(topo.cells[cid].broadcast_plmns):04d}")
            cells_tried += 1
            try:
                add_operator(topo, cid, "99999")
            except TopologyError as exc:
                refused += exc.code == "MAX_PLMN_EXCEEDED"
    obj = gen.scenario(rng)
    obj["topology"]["cells"][0]["broadcast_plmns"] = [f"0019{i}" for i in range(7)]
    try:
        parse_config(obj)
        config_refused = False
    except ConfigError:
        config_refused = True

    # randomized mobility traces
    bad = ops = 0
    for _ in range(300):
        plmns = [f"001{i:02d}" for i in range(1, 5)]
        n = rng.randint(2, 6)
        cells = {f"C{i}": CellModel(f"C{i}", 100, sorted(rng.sample(plmns, rng.randint(1, 4))),
                                    [f"C{j}" for j in range(n) if j != i and rng.random() < 0.6])
                 for i in range(n)}
        topo = Topology(SharingMode.MOCN, cells, {p: f"MME-{p}" for p in plmns})
        home_plmn = rng.choice(plmns)
        ue = UeModel("u", TenantId.operator(home_plmn), home_plmn)
        for _ in range(30):
            target = rng.choice(list(cells))
            ops += 1
            if not ue.attached or rng.random() < 0.2:
                fresh = replace(ue, serving_cell=None)
                allowed = ue.home_plmn in cells[target].broadcast_plmns
                try:
                    attach(fresh, target, topo)
                    ue = fresh
                    bad += not allowed
                except TopologyError as exc:
                    bad += allowed or exc.code != "PLMN_NOT_BROADCAST"
            else:
                allowed = (ue.home_plmn in cells[target].broadcast_plmns
                           and target in cells[ue.serving_cell].neighbors)
                src = ue.serving_cell
                try:
                    handover(ue, target, topo)
                    bad += not allowed
                except TopologyError:
                    bad += allowed or ue.serving_cell != src
            if ue.attached:
                bad += ue.home_plmn not in cells[ue.serving_cell].broadcast_plmns
    # and inside full runs, every served UE stays on a cell broadcasting its PLMN
    for _ in range(10):
        obj = gen.scenario(rng)
        obj["mobility"]["handover_prob"] = 0.3
        world = run_world(obj)
        home = {u.ue_id: u.home_plmn for u in world.cfg.ues}
        bcast = {c.cell_id: c.broadcast_plmns for c in world.cfg.cells}
        for e in world.events.records:
            if e["kind"] in ("ATTACH", "HANDOVER"):
                ops += 1
                cell = e["cell"] if e["kind"] == "ATTACH" else e["target"]
                bad += home[e["ue"]] not in bcast[cell]
    ok = refused == cells_tried and config_refused and bad == 0
    criterion("AC5 six-PLMN limit", ok,
              f"7th PLMN refused on {refused}/{cells_tried} cells, config refused={config_refused}, "
              f"{ops} attach/handover ops, {bad} broadcast violations")
    assert ok


def test_ac6_periodic_lifecycle(criterion):
    rng = random.Random(6)
    horizon = 10_000
    topo = Topology(SharingMode.MOCN, {"C1": CellModel("C1", 10**6)})
    broker = SliceBroker(topo, horizon_slots=horizon)
    specs = {}
    for i in range(60):
        start = rng.randint(0, 2000)
        dur = rng.randint(1, 50)
        per = dur + rng.randint(1, 400)
        window = rng.choice([None, start + rng.randint(0, horizon - start - dur - 1)])
        t = TimeSpec(start, dur, per, window)
        d = broker.submit(SliceRequest(f"p{i}", TenantId.operator("00101"), ResourceSpec.prbs(1), t, cells=("C1",)))
        assert d.granted, d
        specs[d.grant.slice_id] = t
    seen = defaultdict(set)
    for slot in range(horizon):
        for e in broker.tick(slot)[0]:
            if e.kind is LifecycleKind.ACTIVATE:
                seen[e.slice_id].add(e.slot)
    wrong = 0
    total = 0
    for sid, t in specs.items():
        last = horizon - 1 if t.window_end_slot is None else min(t.window_end_slot, horizon - 1)
        # closed form: start + k*P for k = 0 .. floor((last - start) / P)
        want = {t.start_slot + k * t.periodicity_slots for k in range((last - t.start_slot) // t.periodicity_slots + 1)}
        total += len(want)
        wrong += seen[sid] != want
    ok = wrong == 0
    criterion("AC6 periodic lifecycle", ok,
              f"{len(specs)} specs over {horizon} slots, {total} activations expected, {wrong} slices differ")
    assert ok


def test_ac7_deterministic_replay(criterion, tmp_path):
    configs = [load_config(bundled(n)) for n in ("three-slices", "multi-core-shared-ran", "coverage-collaboration",
                                                   "regional-coverage-sharing", "common-spectrum-sharing",
                                                   "shared-core-multi-ran")]
    rng = random.Random(7)
    configs += [parse_config(gen.scenario(rng, mode=rng.choice(["TWO_LAYER", "POOLED"]))) for _ in range(10)]
    csv_diff = replay_diff = 0
    for i, cfg in enumerate(configs):
        a, b = tmp_path / f"{i}a", tmp_path / f"{i}b"
        for d in (a, b):
            w = World(cfg, d)
            w.run()
            w.finish()
        csv_diff += (a / "metrics.csv").read_bytes() != (b / "metrics.csv").read_bytes()
        csv_diff += (a / "events.ndjson").read_bytes() != (b / "events.ndjson").read_bytes()
        replayed = replay_file(a / "decisions.ndjson").registry.snapshot()
        replay_diff += json.loads(wire.dumps(replayed)) != json.loads((a / "registry.json").read_text())
    ok = csv_diff == 0 and replay_diff == 0
    criterion("AC7 deterministic replay", ok,
              f"{len(configs)} scenarios, {csv_diff} output differences, {replay_diff} replay mismatches")
    assert ok


def _outage_config(rng):
    cells = [{"cell_id": f"C{i}", "capacity_prb_per_slot": 100, "broadcast_plmns": ["00101", "00102"],
              "neighbors": []} for i in range(4)]
    tenants = [{"party": f"p{k}", "secret": "s", "tenant": {"kind": "SERVICE", "value": f"v{k}"}} for k in range(4)]
    ues, requests = [], []
    for k in range(4):
        sel = sorted(rng.sample([c["cell_id"] for c in cells], rng.randint(1, 2)))
        for c in sel:
            ues.append({"ue_id": f"u{k}{c}", "party": f"p{k}", "home_plmn": "00101", "cell": c,
                        "demand_prb_per_slot": rng.randint(5, 40), "request_id": f"r{k}"})
        requests.append({"slot": 0, "party": f"p{k}", "request": {
            "request_id": f"r{k}", "tenant": {"kind": "SERVICE", "value": f"v{k}"},
            "resources": {"kind": "PHYSICAL_PRB", "prb_per_slot": rng.randint(5, 25)},
            "time": {"start_slot": 1, "duration_slots": 80}, "cells": sel}})
    hit = f"C{rng.randrange(4)}"
    a = rng.randint(5, 40)
    return {"schema": 1, "seed": rng.randint(0, 999), "slots": 80, "horizon_slots": 200,
            "topology": {"sharing_mode": "MOCN", "cells": cells, "core_endpoints": {"00101": "A", "00102": "B"}},
            "tenants": tenants, "ues": ues, "requests": requests,
            "outages": [{"cell_id": hit, "start_slot": a, "end_slot": a + rng.randint(3, 20),
                         "capacity_prb_per_slot": rng.randint(0, 60)}],
            "background": {"day_length_slots": 20, "default": [[0, 30.0]]}}


def test_ac8_sla_localization(criterion):
    rng = random.Random(8)
    misplaced = mismatched = events_total = 0
    for _ in range(30):
        obj = _outage_config(rng)
        o = obj["outages"][0]
        world = run_world(obj)
        on_cell = {sid for sid, g in world.broker.registry.grants.items() if o["cell_id"] in g.per_cell_prb}
        sla = [e for e in world.events.records if e["kind"] == "SLA"]
        events_total += len(sla)
        misplaced += sum(e["cell"] != o["cell_id"] or e["slice_id"] not in on_cell
                         or not o["start_slot"] <= e["slot"] < o["end_slot"] for e in sla)
        reported = sum(e["deficit"] for e in sla)
        from_log = sum(max(0, min(e["granted_prb"], e["demanded_prb"]) - e["delivered_prb"])
                       for e in world.events.records if e["kind"] == "MEASURE" and e["slice_id"] != BACKGROUND)
        # expected shortfall: quotas scaled by largest remainder on the degraded cell
        granted = {sid: g.per_cell_prb[o["cell_id"]] for sid, g in world.broker.registry.grants.items()
                   if sid in on_cell}
        demand = defaultdict(int)
        for ue in world.ran.ues.values():
            if ue.serving_cell == o["cell_id"] and ue.slice_id in granted:
                demand[ue.slice_id] += ue.demand_prb_per_slot
        slots = [t for t in range(o["start_slot"], o["end_slot"]) if 1 <= t < 81]
        if sum(granted.values()) > o["capacity_prb_per_slot"]:
            q = oracles.hamilton(granted, o["capacity_prb_per_slot"])
        else:
            q = granted
        expected = len(slots) * sum(max(0, min(granted[s], demand[s]) - min(q[s], demand[s])) for s in granted)
        mismatched += not (reported == from_log == expected == world.summary()["total_deficit"])
    ok = misplaced == 0 and mismatched == 0 and events_total > 0
    criterion("AC8 SLA localization", ok,
              f"30 outages, {events_total} SLA events, {misplaced} off the outage cell, {mismatched} total mismatches")
    assert ok


def test_ac9_protocol_round_trip(criterion):
    rng = random.Random(9)
    n = bad = 0
    for mtype in MessageType:
        for _ in range(800):
            m = gen.message(rng, mtype)
            raw = wire.encode(m)
            back = wire.decode(raw)
            bad += back != m or wire.encode(back) != raw
            n += 1
    ok = bad == 0 and n >= 10_000
    criterion("AC9 protocol round-trip", ok, f"{n} messages over {len(MessageType)} types, {bad} failures")
    assert ok


def test_ac10_core_routing(criterion):
    rng = random.Random(10)
    attaches = wrong = 0
    for _ in range(20):
        obj = gen.scenario(rng)
        obj["mobility"]["handover_prob"] = 0.2
        for sharing in ("MOCN", "GWCN"):
            o = json.loads(json.dumps(obj))
            o["topology"]["sharing_mode"] = sharing
            if sharing == "GWCN":
                o["topology"]["shared_mme"] = "MME-SHARED"
            world = run_world(o)
            home = {u.ue_id: u.home_plmn for u in world.cfg.ues}
            for e in world.events.records:
                if e["kind"] in ("ATTACH", "HANDOVER"):
                    attaches += 1
                    want = "MME-SHARED" if sharing == "GWCN" else f"MME-{home[e['ue']]}"
                    wrong += e["core"] != want
    ok = wrong == 0 and attaches > 0
    criterion("AC10 MOCN/GWCN routing", ok, f"{attaches} attaches/handovers in both modes, {wrong} misrouted")
    assert ok


def test_metrics_csv_matches_rows():
    world = run_world(load_config(bundled("three-slices")))
    parsed = list(csv.reader(io.StringIO(world.metrics_csv())))
    assert len(parsed) == len(world.metrics_rows) + 1

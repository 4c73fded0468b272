import json
import threading
from collections import defaultdict

import pytest

import oracles
from slicebroker import cli
from slicebroker.domain import Bearer
from slicebroker.interfaces import wire
from slicebroker.interfaces.server import BackgroundServer, BrokerClient
from slicebroker.interfaces.wire import MessageType
from slicebroker.runner import World, replay_file
from slicebroker.scenario import (bundled, config_to_dict, dumps_config, load_config,
                                  parse_config)
from slicebroker.errors import ConfigError

BUNDLED = ["three-slices", "multi-core-shared-ran", "coverage-collaboration",
           "regional-coverage-sharing", "common-spectrum-sharing", "shared-core-multi-ran"]


def minimal(**extra):
    cfg = {"schema": 1, "name": "tiny", "slots": 10,
           "topology": {"sharing_mode": "MOCN",
                        "cells": [{"cell_id": "C1", "broadcast_plmns": ["00101"]}],
                        "core_endpoints": {"00101": "MME-A"}}}
    cfg.update(extra)
    return cfg


def events(path):
    return [json.loads(line) for line in (path / "events.ndjson").read_text().splitlines()]


def test_empty_scenario_all_zero(tmp_path):
    p = tmp_path / "empty.json"
    p.write_text(json.dumps(minimal()))
    assert cli.main(["run", str(p), "--out", str(tmp_path / "out")]) == 0
    rows = (tmp_path / "out" / "metrics.csv").read_text().splitlines()
    assert rows[0] == "slot,cell,slice,tenant,demanded,quota,delivered,deficit"
    assert len(rows) == 11
    assert all(r.endswith(",0,100,0,0") and ",BACKGROUND,," in r for r in rows[1:])
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["grants"] == [] and summary["sla_events"] == 0


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_scenarios_run_and_replay(tmp_path, name):
    assert cli.main(["validate", name]) == 0
    out = tmp_path / name
    assert cli.main(["run", name, "--out", str(out)]) == 0
    for f in ("events.ndjson", "decisions.ndjson", "metrics.csv", "charging.ndjson", "registry.json", "summary.json"):
        assert (out / f).exists()
    assert cli.main(["replay", str(out / "decisions.ndjson"), "--expect", str(out / "registry.json")]) == 0


def test_three_slices_grants_match_oracle(tmp_path):
    cfg = load_config(bundled("three-slices"))
    world = World(cfg)
    world.run()
    summary = world.finish()
    locs = {u.ue_id: (cfg.party(u.party).tenant, u.cell) for u in cfg.ues}
    want = oracles.admission([r.request for r in cfg.requests], {c.cell_id: c.capacity_prb_per_slot for c in cfg.cells},
                             {}, -1, cfg.effective_horizon, locs)
    assert [g["prb"] for g in summary["grants"]] == [w[2] for w in want]
    cells = {g["request_id"]: g["cells"] for g in summary["grants"]}
    assert cells == {"embb-1": ["C1", "C2"], "auto-1": ["C2", "C3"], "miot-1": ["C1", "C2", "C3"]}


def test_three_slices_outage_hits_only_c3(tmp_path):
    cfg = load_config(bundled("three-slices"))
    world = World(cfg, tmp_path)
    world.run()
    world.finish()
    sla = [e for e in events(tmp_path) if e["kind"] == "SLA"]
    assert sla and {e["cell"] for e in sla} == {"C3"}
    assert {e["slot"] for e in sla} <= set(range(110, 120))


def test_charging_recomputed_from_logs(tmp_path):
    cfg = load_config(bundled("multi-core-shared-ran"))
    world = World(cfg, tmp_path)
    world.run()
    world.finish()
    grants = {}
    for line in (tmp_path / "decisions.ndjson").read_text().splitlines():
        e = json.loads(line)
        if e["op"] == "ADMIT" and e["decision"]["outcome"] == "GRANTED":
            grants[e["slice_id"]] = e["decision"]["grant"]
    # active slots from lifecycle events
    active = defaultdict(int)
    since = {}
    end = cfg.slots
    for e in events(tmp_path):
        if e["kind"] != "LIFECYCLE":
            continue
        sid = e["slice_id"]
        if e["action"] == "ACTIVATE":
            since[sid] = e["at"]
        elif sid in since:
            active[sid] += e["at"] - since.pop(sid)
    for sid, start in since.items():
        active[sid] += end - start
    mult = {"GBR": 1.5, "NON_GBR": 1.0}
    for line in (tmp_path / "charging.ndjson").read_text().splitlines():
        c = json.loads(line)
        g = grants[c["slice_id"]]
        used = sum(g["per_cell_prb"].values()) * active[c["slice_id"]]
        assert c["prb_slots_consumed"] == used
        assert c["amount"] == used * mult[g["qos"]["bearer"]]


def test_average_rate_from_event_log(tmp_path):
    cfg = load_config(bundled("coverage-collaboration"))
    world = World(cfg, tmp_path)
    world.run()
    allocs = defaultdict(list)
    for e in events(tmp_path):
        if e["kind"] == "UE_ALLOC":
            allocs[e["ue"]].append(e["prb"])
    for ue_id, ue in world.ran.ues.items():
        last = allocs[ue_id][-10:]
        assert world.ran.average_rate_mbps(ue_id) == pytest.approx(sum(last) / len(last) * cfg.efficiency[ue.mobility])
    world.finish()


def test_config_errors_name_the_field(tmp_path, capsys):
    bad = minimal(requests=[{"slot": 0, "party": "ghost", "request": {}}])
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(bad))
    assert cli.main(["validate", str(p)]) == 1
    assert "CONFIG_INVALID" in capsys.readouterr().out
    cases = [
        (minimal(schema=2), "schema"),
        (minimal(archetype="SHARED_CORE_MULTI_RAN"), "archetype"),
        (minimal(outages=[{"cell_id": "C1", "start_slot": 0, "end_slot": 5, "capacity_prb_per_slot": 500}]),
         "outages[0].capacity_prb_per_slot"),
        (minimal(tenants=[{"party": "p", "secret": "s", "tenant": {"kind": "OPERATOR", "value": "00101"}}],
                 requests=[{"slot": 0, "party": "p", "request": {
                     "request_id": "r", "tenant": {"kind": "OPERATOR", "value": "00101"},
                     "resources": {"kind": "PHYSICAL_PRB", "prb_per_slot": 5},
                     "time": {"start_slot": 3, "duration_slots": 2, "periodicity_slots": 2}}}]),
         "requests[0].request.time.periodicity_slots"),
    ]
    for obj, field in cases:
        with pytest.raises(ConfigError) as err:
            parse_config(obj)
        assert err.value.field == field


def test_io_errors(tmp_path):
    assert cli.main(["run", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 3
    assert cli.main(["replay", str(tmp_path / "missing.ndjson")]) == 3


def test_config_round_trip():
    cfg = load_config(bundled("three-slices"))
    again = parse_config(json.loads(dumps_config(cfg)))
    assert config_to_dict(again) == config_to_dict(cfg)
    assert again.multipliers[Bearer.GBR] == 1.5


def test_seed_override_changes_background(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", "three-slices", "--out", str(a), "--slots", "30"]) == 0
    assert cli.main(["run", "three-slices", "--out", str(b), "--slots", "30", "--seed", "99"]) == 0
    assert (a / "metrics.csv").read_bytes() != (b / "metrics.csv").read_bytes()


def test_replay_cmd_detects_mismatch(tmp_path, capsys):
    out = tmp_path / "o"
    cli.main(["run", "regional-coverage-sharing", "--out", str(out), "--slots", "20"])
    reg = json.loads((out / "registry.json").read_text())
    reg["clock"] += 1
    (out / "other.json").write_text(json.dumps(reg))
    assert cli.main(["replay", str(out / "decisions.ndjson"), "--expect", str(out / "other.json")]) == 2
    assert replay_file(out / "decisions.ndjson").registry.snapshot()["clock"] == 19


def _serve_cfg():
    return parse_config(minimal(
        slots=10**6, slot_seconds=1.0,
        tenants=[{"party": "a", "secret": "x", "tenant": {"kind": "SERVICE", "value": "va"}},
                 {"party": "b", "secret": "y", "tenant": {"kind": "SERVICE", "value": "vb"}}]))


def _req(tenant, rid, start):
    return {"request_id": rid, "tenant": {"kind": "SERVICE", "value": tenant},
            "resources": {"kind": "PHYSICAL_PRB", "prb_per_slot": 60},
            "time": {"start_slot": start, "duration_slots": 50}, "cells": ["C1"]}


def test_serve_over_tcp_serializes_conflicts(tmp_path):
    world = World(_serve_cfg(), tmp_path)
    srv = BackgroundServer(world, speedup=1000.0).start()
    results = {}

    def client(name, secret, tenant):
        with BrokerClient("127.0.0.1", srv.port) as c:
            assert c.authenticate(name, secret).body["scope"] == "THIRD_PARTY"
            # FIFO: several requests answered in submission order
            for i in range(3):
                c.send(MessageType.SLICE_REQ, {"request": _req(tenant, f"{tenant}-{i}", 10**5 + i)})
            results[name] = [c.receive() for _ in range(3)]

    threads = [threading.Thread(target=client, args=a) for a in (("a", "x", "va"), ("b", "y", "vb"))]
    for t in threads:
        t.start()
    for t in threads:
        t.join(20)
    summary = srv.stop()
    for name, msgs in results.items():
        assert [m.seq for m in msgs] == [2, 3, 4]
    outcomes = [wire.decision_from_wire(m.body["decision"]) for msgs in results.values() for m in msgs]
    # all six overlap on C1 with 60 PRB each: exactly one can win
    assert sum(d.granted for d in outcomes) == 1
    assert len(summary["grants"]) == 1
    assert world.slot > 0
    assert cli.main(["replay", str(tmp_path / "decisions.ndjson"), "--expect", str(tmp_path / "registry.json")]) == 0


def test_serve_bind_failure():
    srv = BackgroundServer(World(_serve_cfg()), speedup=1000.0).start()
    try:
        with pytest.raises(Exception) as err:
            BackgroundServer(World(_serve_cfg()), port=srv.port).start()
        assert getattr(err.value, "code", None) == "BIND_FAILED"
    finally:
        srv.stop()

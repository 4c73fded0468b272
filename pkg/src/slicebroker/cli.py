"""Command line entry point.

    slicebroker run <config> --out <dir> [--seed N] [--horizon SLOTS]
    slicebroker serve <config> --port P [--speedup X] [--out DIR]
    slicebroker validate <config>
    slicebroker replay <decision-log> [--expect registry.json]

Exit codes: 0 ok, 1 config error, 2 invariant violation, 3 I/O error.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import signal
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError, InvariantViolation, SliceBrokerError
from .interfaces import wire
from .runner import World, replay_file
from .scenario import bundled, load_config, validate_config

log = logging.getLogger("slicebroker")

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_IO = 0, 1, 2, 3


def _resolve(config: str) -> Path:
    p = Path(config)
    if not p.exists() and "/" not in config and not config.endswith(".json"):
        return bundled(config)
    return p


def _load(config, seed=None, horizon=None):
    cfg = load_config(_resolve(config))
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if horizon is not None:
        changes["horizon_slots"] = horizon
    return validate_config(replace(cfg, **changes)) if changes else cfg


def run_scenario(config_path, output_dir, seed=None, horizon=None, slots=None) -> int:
    """Run a scenario to completion and write its artifacts to ``output_dir``."""
    try:
        cfg = _load(config_path, seed, horizon)
    except ConfigError as exc:
        log.error("config invalid at %s: %s", exc.field, exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("cannot read config: %s", exc)
        return EXIT_IO
    try:
        world = World(cfg, output_dir)
        world.run(slots)
        summary = world.finish()
    except InvariantViolation as exc:
        log.error("invariant violated: %s", exc)
        return EXIT_INVARIANT
    except SliceBrokerError as exc:
        log.error("config invalid: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    log.info("%s: %d grants, rejections %s, %d SLA events",
             cfg.name, len(summary["grants"]), summary["rejections"], summary["sla_events"])
    return EXIT_OK


def serve(config_path, port, speedup=1.0, output_dir=None, host="127.0.0.1") -> int:
    from .interfaces.server import serve_world

    try:
        cfg = _load(config_path)
        world = World(cfg, output_dir)
    except ConfigError as exc:
        log.error("config invalid at %s: %s", exc.field, exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("cannot read config: %s", exc)
        return EXIT_IO

    async def main():
        stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGTERM, signal.SIGINT):
            try:
                loop.add_signal_handler(sig, stop.set)
            except (NotImplementedError, RuntimeError):
                pass
        return await serve_world(world, host, port, speedup, stop=stop,
                                 ready=lambda p: log.info("listening on %s:%d", host, p))

    try:
        asyncio.run(main())
    except InvariantViolation as exc:
        log.error("invariant violated: %s", exc)
        return EXIT_INVARIANT
    except SliceBrokerError as exc:
        log.error("%s", exc)
        return EXIT_IO if exc.code == "BIND_FAILED" else EXIT_CONFIG
    return EXIT_OK


def validate(config_path) -> int:
    try:
        cfg = _load(config_path)
    except ConfigError as exc:
        print(f"CONFIG_INVALID {exc.field}: {exc}")
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}")
        return EXIT_IO
    print(f"OK {cfg.name} ({cfg.archetype.value}, {cfg.sharing_mode.value}, {len(cfg.cells)} cells)")
    return EXIT_OK


def replay_cmd(log_path, expect=None) -> int:
    try:
        broker = replay_file(log_path)
    except OSError as exc:
        print(f"cannot read decision log: {exc}")
        return EXIT_IO
    except (ValueError, KeyError, SliceBrokerError) as exc:
        print(f"bad decision log: {exc}")
        return EXIT_CONFIG
    snap = broker.registry.snapshot()
    if expect is not None:
        try:
            want = json.loads(Path(expect).read_text(encoding="utf-8"))
        except OSError as exc:
            print(f"cannot read {expect}: {exc}")
            return EXIT_IO
        if want != json.loads(wire.dumps(snap)):
            print("MISMATCH: replayed registry differs from", expect)
            return EXIT_INVARIANT
        print("MATCH")
    else:
        print(wire.dumps(snap))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="slicebroker", description="Network slice broker simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="run a scenario and write artifacts")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--horizon", type=int, help="commitment horizon in slots")
    p.add_argument("--slots", type=int, help="override the number of slots to simulate")

    p = sub.add_parser("serve", help="serve tenant sessions over TCP")
    p.add_argument("config")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--speedup", type=float, default=1.0)
    p.add_argument("--out")
    p.add_argument("--host", default="127.0.0.1")

    p = sub.add_parser("validate", help="check a scenario config")
    p.add_argument("config")

    p = sub.add_parser("replay", help="rebuild the registry from a decision log")
    p.add_argument("log")
    p.add_argument("--expect", help="registry.json to compare against")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.cmd == "run":
        return run_scenario(args.config, args.out, args.seed, args.horizon, args.slots)
    if args.cmd == "serve":
        return serve(args.config, args.port, args.speedup, args.out, args.host)
    if args.cmd == "validate":
        return validate(args.config)
    return replay_cmd(args.log, args.expect)


if __name__ == "__main__":
    sys.exit(main())

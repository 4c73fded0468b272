"""TCP transport: one connection is one session, one line is one message.

All connections share a single asyncio loop, so every broker-bound message is
handled in one total order while each connection keeps its own FIFO order.
"""

from __future__ import annotations

import asyncio
import socket
import threading
from typing import Optional

from ..errors import SliceBrokerError
from . import wire
from .wire import Message


async def serve_world(world, host: str = "127.0.0.1", port: int = 0, speedup: float = 1.0,
                      max_slots: Optional[int] = None, stop: asyncio.Event = None, ready=None):
    """Serve tenant sessions while advancing ``world`` in accelerated time.

    ``ready`` is called with the bound port once listening. Returns the run
    summary after ``stop`` is set; logs are flushed on the way out.
    """
    stop = stop or asyncio.Event()

    async def handle(reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        conn = world.gateway.connect()
        try:
            while True:
                line = await reader.readline()
                if not line:
                    break
                if not line.strip():
                    continue
                writer.write(conn.handle_line(line))
                await writer.drain()
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            writer.close()

    try:
        server = await asyncio.start_server(handle, host, port)
    except OSError as exc:
        raise SliceBrokerError("BIND_FAILED", f"{host}:{port}: {exc}") from exc

    async def clock():
        interval = world.cfg.slot_seconds / speedup
        while max_slots is None or world.slot + 1 < max_slots:
            await asyncio.sleep(interval)
            world.step()

    ticker = asyncio.create_task(clock())
    if ready is not None:
        ready(server.sockets[0].getsockname()[1])
    try:
        done, _ = await asyncio.wait({ticker, asyncio.create_task(stop.wait())},
                                     return_when=asyncio.FIRST_COMPLETED)
        if ticker in done and ticker.exception() is not None:
            raise ticker.exception()
        if ticker in done:
            await stop.wait()
    finally:
        ticker.cancel()
        server.close()
        await server.wait_closed()
    return world.finish()


class BackgroundServer:
    """Runs :func:`serve_world` on a private thread; handy for tests and tools."""

    def __init__(self, world, speedup: float = 1.0, max_slots: Optional[int] = None, port: int = 0):
        self.world = world
        self.port = None
        self.summary = None
        self.error = None
        self._args = (speedup, max_slots, port)
        self._ready = threading.Event()
        self._loop = None
        self._stop = None
        self._thread = threading.Thread(target=self._main, daemon=True)

    def _main(self):
        speedup, max_slots, port = self._args
        self._loop = asyncio.new_event_loop()
        self._stop = asyncio.Event()

        def ready(p):
            self.port = p
            self._ready.set()
        try:
            self.summary = self._loop.run_until_complete(
                serve_world(self.world, port=port, speedup=speedup, max_slots=max_slots,
                            stop=self._stop, ready=ready))
        except BaseException as exc:  # surfaced by stop()
            self.error = exc
            self._ready.set()
        finally:
            self._loop.close()

    def start(self) -> "BackgroundServer":
        self._thread.start()
        self._ready.wait(10)
        if self.error is not None:
            raise self.error
        return self

    def call(self, fn):
        """Run ``fn()`` on the server loop thread and return its result."""
        fut = asyncio.run_coroutine_threadsafe(_call(fn), self._loop)
        return fut.result(10)

    def stop(self):
        if self._loop is not None and not self._loop.is_closed():
            self._loop.call_soon_threadsafe(self._stop.set)
        self._thread.join(10)
        if self.error is not None:
            raise self.error
        return self.summary


async def _call(fn):
    return fn()


class BrokerClient:
    """Blocking line-protocol client."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.file = self.sock.makefile("rb")
        self.seq = 0

    def send(self, mtype, body: dict) -> None:
        self.seq += 1
        self.sock.sendall(wire.encode(Message(wire.MessageType(mtype), self.seq, body)))

    def receive(self) -> Message:
        line = self.file.readline()
        if not line:
            raise ConnectionError("server closed the connection")
        return wire.decode(line)

    def request(self, mtype, body: dict) -> Message:
        self.send(mtype, body)
        return self.receive()

    def authenticate(self, party: str, secret: str) -> Message:
        return self.request(wire.MessageType.AUTH_REQ, {"party": party, "secret": secret})

    def close(self):
        self.file.close()
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

"""The probe node daemon.

One asyncio loop carries the sender schedule, the receive/echo paths of
every connection and the control channel. Flushing runs on its own thread so
storage stalls never reach the recording path.
"""

from __future__ import annotations

import asyncio
import json
import logging
import math
import os
import socket
import threading
import time
from pathlib import Path

from . import wire
from .errors import (
    BadCommand,
    BindFailure,
    ControlError,
    ForeignEcho,
    IllegalState,
    LatmeshError,
    PeersNotReady,
    SinkFailure,
    WireError,
)
from .probe import ProbeCore
from .recorder import LOSS_COLUMNS, OBS_COLUMNS, CsvSink, flush
from .topology import config_from_dict

log = logging.getLogger(__name__)

IDLE, LOADED, RUNNING, STOPPING, STOPPED = "idle", "loaded", "running", "stopping", "stopped"

_BACKOFF_MIN_S = 0.05
_BACKOFF_MAX_S = 1.0


def obs_filename(node_id):
    return f"node_{node_id}_obs.csv"


def loss_filename(node_id):
    return f"node_{node_id}_loss.csv"


def rounds_for(cfg):
    """Number of rounds whose scheduled start falls inside ``duration_s``."""
    return max(1, math.ceil(round(cfg.duration_s * cfg.round_rate_hz, 9)))


def _nodelay(transport):
    sock = transport.get_extra_info("socket")
    if sock is not None:
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)


class Flusher(threading.Thread):
    """Periodically moves buffered rows to their sinks."""

    def __init__(self, jobs, interval_s):
        super().__init__(daemon=True, name="latmesh-flusher")
        self.jobs = jobs
        self.interval_s = interval_s
        self.failures = 0
        self._stop_event = threading.Event()

    def run(self):
        while not self._stop_event.wait(self.interval_s):
            self.flush_once()

    def flush_once(self):
        for buffer, sink in self.jobs:
            try:
                flush(buffer, sink)
            except SinkFailure as exc:
                self.failures += 1
                log.warning("flush to %s failed, keeping rows buffered: %s", getattr(sink, "path", sink), exc)

    def stop(self):
        self._stop_event.set()


class _ProbeServerProtocol(asyncio.Protocol):
    """Inbound side: echo every probe on the connection it arrived on."""

    def __init__(self, node):
        self.node = node
        self.reader = wire.FrameReader()
        self.transport = None

    def connection_made(self, transport):
        _nodelay(transport)
        self.transport = transport

    def data_received(self, data):
        try:
            frames = self.reader.feed(data)
        except WireError as exc:
            log.error("dropping inbound connection: %s", exc)
            self.transport.close()
            return
        node_id = self.node.self_id
        for frame in frames:
            try:
                probe = wire.decode_probe(frame)
            except WireError as exc:
                log.error("bad probe frame: %s", exc)
                continue
            self.transport.write(wire.encode_echo(wire.make_echo(probe, node_id)))


class _PeerLink(asyncio.Protocol):
    """Outbound side: carries our probes to one peer and reads its echoes."""

    def __init__(self, node, peer_id):
        self.node = node
        self.peer_id = peer_id
        self.reader = wire.FrameReader()
        self.transport = None

    def connection_made(self, transport):
        _nodelay(transport)
        self.transport = transport

    def data_received(self, data):
        now = time.monotonic_ns()
        try:
            frames = self.reader.feed(data)
        except WireError as exc:
            log.error("dropping link to %s: %s", self.peer_id, exc)
            self.transport.close()
            return
        core = self.node.core
        if core is None:
            return
        for frame in frames:
            try:
                obs = core.handle_echo(wire.decode_echo(frame), now)
            except (WireError, ForeignEcho) as exc:
                log.error("bad echo from %s: %s", self.peer_id, exc)
                continue
            if obs is not None:
                core.record(obs)

    def connection_lost(self, exc):
        self.node._link_lost(self.peer_id, self)


class ProbeNode:
    """A measurement node: data listener, peer links, control server.

    ``dial_overrides`` maps peer id to an Address to dial instead of the
    peer's configured data address (the simulation harness uses it to
    interpose delay proxies). ``sink_factory(path, columns)`` replaces the
    CSV sink, e.g. with one that stalls.
    """

    def __init__(self, cfg, self_id, data_dir, dial_overrides=None, sink_factory=None,
                 listen_data=True):
        if self_id not in cfg:
            raise KeyError(f"node {self_id} is not part of the config")
        self.cfg = cfg
        self.self_id = self_id
        self.spec = cfg.node(self_id)
        self.data_dir = Path(data_dir)
        self.dial_overrides = dict(dial_overrides or {})
        self.sink_factory = sink_factory or CsvSink
        self.listen_data = listen_data

        self.state = IDLE
        self.core = None
        self.links = {}
        self.ready = threading.Event()
        self.bind_error = None

        self._loop = None
        self._shutdown = None
        self._servers = []
        self._tasks = set()
        self._flusher = None
        self._sinks = None
        self._schedule_task = None
        self._stop_future = None

    # ----- lifecycle -------------------------------------------------------

    async def serve(self):
        self._loop = asyncio.get_running_loop()
        self._shutdown = asyncio.Event()
        self.data_dir.mkdir(parents=True, exist_ok=True)
        try:
            if self.listen_data:
                self._servers.append(await self._loop.create_server(
                    lambda: _ProbeServerProtocol(self),
                    self.spec.data_address.host, self.spec.data_address.port,
                    reuse_address=True))
            self._servers.append(await asyncio.start_server(
                self._handle_control,
                self.spec.control_address.host, self.spec.control_address.port,
                reuse_address=True))
        except OSError as exc:
            self.bind_error = BindFailure(f"node {self.self_id}: {exc}")
            self.ready.set()
            for server in self._servers:
                server.close()
            raise self.bind_error from exc
        self._spawn(self._connector())
        self.ready.set()
        log.info("node %s listening (data %s, control %s)", self.self_id,
                 self.spec.data_address, self.spec.control_address)
        try:
            await self._shutdown.wait()
        finally:
            await self._teardown()

    def shutdown(self):
        """Thread-safe request to stop serving."""
        if self._loop is not None and self._shutdown is not None:
            self._loop.call_soon_threadsafe(self._shutdown.set)

    async def _teardown(self):
        if self.state in (RUNNING, STOPPING):
            await self._stop()
        for task in list(self._tasks):
            task.cancel()
        for server in self._servers:
            server.close()
        for link in list(self.links.values()):
            if link.transport is not None:
                link.transport.close()
        self.links.clear()
        if self._flusher is not None:
            self._flusher.stop()

    def _spawn(self, coro):
        task = self._loop.create_task(coro)
        self._tasks.add(task)
        task.add_done_callback(self._tasks.discard)
        return task

    # ----- peer links ------------------------------------------------------

    def dial_address(self, peer_id):
        return self.dial_overrides.get(peer_id) or self.cfg.node(peer_id).data_address

    async def _connector(self):
        backoff = {}
        while True:
            for peer_id in self.cfg.node_ids:
                if peer_id in self.links:
                    continue
                now = time.monotonic()
                delay, next_try = backoff.get(peer_id, (_BACKOFF_MIN_S, 0.0))
                if now < next_try:
                    continue
                addr = self.dial_address(peer_id)
                try:
                    _, link = await self._loop.create_connection(
                        lambda pid=peer_id: _PeerLink(self, pid), addr.host, addr.port)
                except OSError as exc:
                    log.debug("peer %s at %s unreachable: %s", peer_id, addr, exc)
                    backoff[peer_id] = (min(delay * 2, _BACKOFF_MAX_S), now + delay)
                    continue
                backoff.pop(peer_id, None)
                if peer_id in self.cfg:
                    self.links[peer_id] = link
                else:
                    link.transport.close()
            await asyncio.sleep(_BACKOFF_MIN_S)

    def _link_lost(self, peer_id, link):
        if self.links.get(peer_id) is link:
            del self.links[peer_id]
            log.info("node %s lost link to %s", self.self_id, peer_id)

    def missing_peers(self):
        return [pid for pid in self.cfg.node_ids if pid not in self.links]

    # ----- experiment ------------------------------------------------------

    def load(self, cfg):
        if self.state in (RUNNING, STOPPING):
            raise IllegalState(f"cannot LOAD while {self.state}")
        if self.self_id not in cfg:
            raise IllegalState(f"config does not contain node {self.self_id}")
        mine = cfg.node(self.self_id)
        if (mine.data_address, mine.control_address) != (self.spec.data_address, self.spec.control_address):
            raise IllegalState("config moves this node's own addresses")
        for peer_id, link in list(self.links.items()):
            if peer_id not in cfg or cfg.node(peer_id).data_address != self.cfg.node(peer_id).data_address:
                link.transport.close()
                self.links.pop(peer_id, None)
        self.cfg = cfg
        self.spec = mine
        self.core = ProbeCore(cfg, self.self_id)
        self._sinks = (
            self.sink_factory(self.data_dir / obs_filename(self.self_id), OBS_COLUMNS),
            self.sink_factory(self.data_dir / loss_filename(self.self_id), LOSS_COLUMNS),
        )
        self.state = LOADED
        return cfg.digest()

    def start(self):
        if self.state != LOADED:
            raise IllegalState(f"cannot START while {self.state}")
        missing = self.missing_peers()
        if missing:
            raise PeersNotReady(f"no connection to peers {missing}", missing=missing)
        core = self.core
        jobs = [(core.observations, self._sinks[0]), (core.losses, self._sinks[1])]
        self._flusher = Flusher(jobs, self.cfg.flush_interval_s)
        if self.cfg.flush_interval_s > 0:
            self._flusher.start()
        self.state = RUNNING
        self._stop_future = self._loop.create_future()
        self._schedule_task = self._spawn(self._run_schedule())
        self._spawn(self._expiry_loop())

    async def _run_schedule(self):
        cfg, core = self.cfg, self.core
        total = rounds_for(cfg)
        period = 1.0 / cfg.round_rate_hz
        t0 = self._loop.time()
        try:
            for rnd in range(total):
                delay = t0 + rnd * period - self._loop.time()
                if delay > 0:
                    await asyncio.sleep(delay)
                self._fire(core, rnd)
        except asyncio.CancelledError:
            return
        self._spawn(self._stop())

    def _fire(self, core, rnd):
        items = core.sender_tick(rnd, time.monotonic_ns(), time.time_ns() // 1000)
        frame = None
        for probe, entry in items:
            if frame is None:
                frame = wire.encode_probe(probe)
            link = self.links.get(entry.receiver)
            if link is None or link.transport is None or link.transport.is_closing():
                continue  # stays pending and expires as a loss
            core.restamp(entry.receiver, rnd, time.monotonic_ns())
            link.transport.write(frame)

    async def _expiry_loop(self):
        interval = min(1.0, self.cfg.pending_expiry_s / 10)
        while self.state == RUNNING:
            await asyncio.sleep(interval)
            self.core.expire_pending(time.monotonic_ns())

    async def _stop(self):
        if self.state == STOPPED:
            return
        if self.state == STOPPING:
            await asyncio.shield(self._stop_future)
            return
        self.state = STOPPING
        if self._schedule_task is not None and self._schedule_task is not asyncio.current_task():
            self._schedule_task.cancel()
        core = self.core
        deadline = time.monotonic() + self.cfg.pending_expiry_s
        while core.pending and time.monotonic() < deadline:
            await asyncio.sleep(0.01)
            core.expire_pending(time.monotonic_ns())
        # everything left was sent before the stop and is now past its expiry
        core.expire_pending(time.monotonic_ns(), pending_expiry_s=0)
        flusher = self._flusher
        flusher.stop()
        await self._loop.run_in_executor(None, self._final_flush, flusher)
        self.state = STOPPED
        if not self._stop_future.done():
            self._stop_future.set_result(None)
        log.info("node %s stopped: %s", self.self_id, core.status())

    @staticmethod
    def _final_flush(flusher):
        if flusher.is_alive():
            flusher.join()
        for _ in range(3):
            flusher.flush_once()
            if all(buf.in_buffer_count == 0 for buf, _ in flusher.jobs):
                return

    def status(self):
        counters = self.core.status() if self.core is not None else {
            "rounds_sent": 0, "observations": 0, "losses": 0, "late_echoes": 0,
            "pending": 0, "buffer_depth": 0, "flushed": 0, "max_record_us": 0.0,
            "slow_records": 0,
        }
        return {
            "node": self.self_id,
            "state": self.state,
            "digest": self.cfg.digest() if self.core is not None else None,
            "peers_connected": sorted(self.links),
            "peers_missing": self.missing_peers(),
            "n_nodes": len(self.cfg.nodes),
            "sink_failures": self._flusher.failures if self._flusher else 0,
            **counters,
        }

    # ----- control channel -------------------------------------------------

    async def _handle_control(self, reader, writer):
        try:
            while True:
                line = await reader.readline()
                if not line:
                    break
                await self._dispatch(line.decode("utf-8", "replace").rstrip("\r\n"), writer)
                await writer.drain()
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            writer.close()

    async def _dispatch(self, line, writer):
        verb, _, arg = line.partition(" ")
        verb = verb.upper()
        try:
            if verb == "FETCH":
                writer.write(await self._fetch(arg.strip().lower() or "obs"))
                return
            reply = await self._command(verb, arg)
            reply = {"ok": True, **reply}
        except ControlError as exc:
            reply = {"ok": False, "error": exc.code, "message": str(exc), **exc.details}
        except LatmeshError as exc:
            reply = {"ok": False, "error": type(exc).__name__, "message": str(exc)}
        writer.write((json.dumps(reply) + "\n").encode())

    async def _command(self, verb, arg):
        if verb == "LOAD":
            try:
                cfg = config_from_dict(json.loads(arg))
            except json.JSONDecodeError as exc:
                raise BadCommand(f"LOAD payload is not JSON: {exc}") from None
            return {"digest": self.load(cfg), "state": self.state}
        if verb == "START":
            self.start()
            return self.status()
        if verb == "STOP":
            if self.state in (IDLE, LOADED):
                raise IllegalState(f"cannot STOP while {self.state}")
            await self._stop()
            return self.status()
        if verb == "STATUS":
            return self.status()
        raise BadCommand(f"unknown verb {verb!r}")

    async def _fetch(self, which):
        if which not in ("obs", "loss"):
            err = {"ok": False, "error": "BadCommand", "message": f"FETCH {which!r}: expected obs or loss"}
            return (json.dumps(err) + "\n").encode()
        if self.state not in (LOADED, STOPPED) or self._sinks is None:
            err = {"ok": False, "error": "IllegalState", "message": f"cannot FETCH while {self.state}"}
            return (json.dumps(err) + "\n").encode()
        sink = self._sinks[0] if which == "obs" else self._sinks[1]
        path = getattr(sink, "path", None)
        data = await self._loop.run_in_executor(None, Path(path).read_bytes)
        return f"{len(data)}\n".encode() + data


class NodeThread(threading.Thread):
    """Runs a ProbeNode on its own event loop in a background thread."""

    def __init__(self, node):
        super().__init__(daemon=True, name=f"latmesh-node-{node.self_id}")
        self.node = node
        self.error = None

    def run(self):
        try:
            asyncio.run(self.node.serve())
        except Exception as exc:  # surfaced through wait_ready / stop
            self.error = exc
            self.node.ready.set()

    def wait_ready(self, timeout=10.0):
        if not self.node.ready.wait(timeout):
            raise TimeoutError(f"node {self.node.self_id} did not come up")
        if self.node.bind_error is not None:
            raise self.node.bind_error
        if self.error is not None:
            raise self.error

    def stop(self, timeout=30.0):
        self.node.shutdown()
        self.join(timeout)


def run_node(cfg, self_id, data_dir=None, **kwargs):
    """Run a node in the foreground until interrupted; returns an exit status."""
    import signal

    data_dir = data_dir or os.path.join(os.getcwd(), f"latmesh-node-{self_id}")
    node = ProbeNode(cfg, self_id, data_dir, **kwargs)

    async def main():
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGINT, signal.SIGTERM):
            try:
                loop.add_signal_handler(sig, node.shutdown)
            except (NotImplementedError, RuntimeError):
                pass
        await node.serve()

    try:
        asyncio.run(main())
    except BindFailure as exc:
        log.error("%s", exc)
        return 2
    return 0

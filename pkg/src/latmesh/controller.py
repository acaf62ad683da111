"""Operator side of the control channel.

Commands go to every node concurrently; results come back as a map keyed by
node id once all nodes have answered.
"""

from __future__ import annotations

import json
import logging
import os
import socket
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .errors import (
    CONTROL_ERRORS,
    ClusterError,
    ControlError,
    DigestMismatch,
    IllegalState,
    NodeUnreachable,
    PeersNotReady,
    ShortRead,
)
from .node import loss_filename, obs_filename

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
TOPOLOGY_NAME = "topology.json"


class ControlClient:
    """Line-oriented connection to one node's control port."""

    def __init__(self, node_id, address, timeout=10.0):
        self.node_id = node_id
        self.address = address
        self.timeout = timeout
        self._sock = None
        self._rfile = None

    def _connect(self):
        if self._sock is None:
            try:
                self._sock = socket.create_connection(tuple(self.address), timeout=self.timeout)
            except OSError as exc:
                raise NodeUnreachable(self.node_id, str(exc)) from None
            self._rfile = self._sock.makefile("rb")

    def close(self):
        if self._sock is not None:
            self._rfile.close()
            self._sock.close()
            self._sock = self._rfile = None

    def _send(self, line, timeout):
        self._connect()
        self._sock.settimeout(timeout or self.timeout)
        try:
            self._sock.sendall(line.encode() + b"\n")
        except OSError as exc:
            self.close()
            raise NodeUnreachable(self.node_id, str(exc)) from None

    def _readline(self):
        try:
            line = self._rfile.readline()
        except OSError as exc:
            self.close()
            raise NodeUnreachable(self.node_id, str(exc)) from None
        if not line:
            self.close()
            raise NodeUnreachable(self.node_id, "connection closed")
        return line

    @staticmethod
    def _raise_for(reply):
        details = {k: v for k, v in reply.items() if k not in ("ok", "error", "message")}
        cls = CONTROL_ERRORS.get(reply.get("error"), ControlError)
        exc = cls(reply.get("message", ""), **details)
        if cls is ControlError:
            exc.code = reply.get("error", "ControlError")
        raise exc

    def request(self, line, timeout=None):
        self._send(line, timeout)
        reply = json.loads(self._readline())
        if not reply.get("ok"):
            self._raise_for(reply)
        return reply

    def fetch(self, which="obs", timeout=None):
        self._send(f"FETCH {which}", timeout)
        head = self._readline()
        if head.startswith(b"{"):
            self._raise_for(json.loads(head))
        expected = int(head)
        try:
            data = self._rfile.read(expected)
        except OSError as exc:
            self.close()
            raise ShortRead(f"node {self.node_id}: {exc}") from None
        if len(data) != expected:
            self.close()
            raise ShortRead(f"node {self.node_id}: got {len(data)} of {expected} bytes")
        return data


class ClusterHandle:
    """Control connections to every node of one cluster config."""

    def __init__(self, cfg, timeout=10.0):
        self.config = cfg
        self.timeout = timeout
        self.clients = {n.id: ControlClient(n.id, n.control_address, timeout) for n in cfg.nodes}

    def close(self):
        for client in self.clients.values():
            client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def each(self, verb, fn, node_ids=None):
        """Run ``fn(client)`` for every node concurrently.

        Returns the result map, or raises ClusterError carrying both the
        per-node failures and the results of the nodes that succeeded.
        """
        ids = list(self.clients) if node_ids is None else list(node_ids)
        results, failures = {}, {}
        with ThreadPoolExecutor(max_workers=max(1, len(ids))) as pool:
            futures = {nid: pool.submit(fn, self.clients[nid]) for nid in ids}
            for nid, fut in futures.items():
                try:
                    results[nid] = fut.result()
                except Exception as exc:
                    failures[nid] = exc
        if failures:
            raise ClusterError(verb, failures, results)
        return results


def push_config(handle, cfg=None):
    """LOAD ``cfg`` everywhere; returns node id -> acknowledged digest."""
    cfg = cfg or handle.config
    expected = cfg.digest()
    line = "LOAD " + cfg.to_json()

    def load(client):
        digest = client.request(line)["digest"]
        if digest != expected:
            raise DigestMismatch(client.node_id, expected, digest)
        return digest

    return handle.each("LOAD", load)


def status_all(handle):
    return handle.each("STATUS", lambda c: c.request("STATUS"))


def start_all(handle, ready_timeout_s=10.0):
    """START every node, but only once every node is loaded and fully meshed."""
    deadline = time.monotonic() + ready_timeout_s
    while True:
        statuses = status_all(handle)
        failures = {}
        for nid, st in statuses.items():
            if st["state"] != "loaded":
                failures[nid] = IllegalState(f"node is {st['state']}, START needs a loaded node")
            elif st["peers_missing"]:
                failures[nid] = PeersNotReady(f"missing peers {st['peers_missing']}",
                                              missing=st["peers_missing"])
        if not failures:
            break
        waiting_only = all(isinstance(e, PeersNotReady) for e in failures.values())
        if not waiting_only or time.monotonic() >= deadline:
            raise ClusterError("START", failures, statuses)
        time.sleep(0.05)
    return handle.each("START", lambda c: c.request("START"))


def stop_all(handle):
    """STOP every node; each reply arrives after that node drained and flushed."""
    timeout = handle.config.pending_expiry_s + 60.0
    return handle.each("STOP", lambda c: c.request("STOP", timeout=timeout))


def wait_stopped(handle, timeout_s, poll_s=0.2):
    """Block until every node reports ``stopped`` (end of its own schedule)."""
    deadline = time.monotonic() + timeout_s
    while True:
        statuses = status_all(handle)
        if all(st["state"] == "stopped" for st in statuses.values()):
            return statuses
        if time.monotonic() >= deadline:
            return statuses
        time.sleep(poll_s)


def _count_rows(data):
    return max(0, data.count(b"\n") - 1)


def fetch_all(handle, out_dir):
    """Retrieve every node's observation and loss CSV into ``out_dir``.

    Writes ``node_<id>_obs.csv``, ``node_<id>_loss.csv``, a copy of the
    cluster config and ``manifest.json``; returns the manifest.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    statuses = status_all(handle)
    busy = {nid: IllegalState(f"node is {st['state']}") for nid, st in statuses.items()
            if st["state"] in ("running", "stopping")}
    if busy:
        raise ClusterError("FETCH", busy, statuses)

    def fetch_node(client):
        entries = []
        status = statuses[client.node_id]
        for which, name, counter in (("obs", obs_filename, "observations"),
                                     ("loss", loss_filename, "losses")):
            try:
                data = client.fetch(which)
            except ShortRead as exc:
                log.warning("%s; retrying once", exc)
                data = client.fetch(which)
            rows = _count_rows(data)
            if rows != status[counter]:
                raise ShortRead(f"node {client.node_id} {which}: {rows} rows fetched, "
                                f"STATUS reports {status[counter]}")
            path = out_dir / name(client.node_id)
            path.write_bytes(data)
            entries.append({"file": path.name, "node": client.node_id, "kind": which,
                            "rows": rows, "bytes": len(data)})
        return entries

    per_node = handle.each("FETCH", fetch_node)
    (out_dir / TOPOLOGY_NAME).write_text(json.dumps(handle.config.to_dict(), indent=2) + "\n")
    manifest = {
        "digest": handle.config.digest(),
        "files": [e for nid in sorted(per_node) for e in per_node[nid]],
    }
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    return manifest

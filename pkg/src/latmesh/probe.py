"""Sans-IO measurement state of one probe node.

``ProbeCore`` owns the pending-probe table, the observation and loss
buffers and the node counters. It never touches sockets or clocks itself;
the daemon in :mod:`latmesh.node` feeds it timestamps and messages.
"""

from __future__ import annotations

import time
from typing import NamedTuple

from .errors import ForeignEcho
from .recorder import LOSS_DTYPE, OBS_DTYPE, LossRecord, Observation, RecorderBuffer
from .wire import ProbeMessage, make_echo

SLOW_RECORD_NS = 1_000_000


class PendingEntry(NamedTuple):
    receiver: int
    round: int
    send_mono_ns: int
    send_wall_ts_us: int


def make_payload(size):
    """Deterministic filler payload of ``size`` bytes."""
    pattern = bytes(range(256))
    return (pattern * (size // 256 + 1))[:size]


class ProbeCore:
    def __init__(self, cfg, self_id, payload=None, chunk_rows=None):
        if self_id not in cfg:
            raise KeyError(f"node {self_id} is not part of the config")
        self.cfg = cfg
        self.self_id = self_id
        self.targets = tuple(cfg.node_ids)
        self.payload = make_payload(cfg.payload_bytes) if payload is None else bytes(payload)
        self.pending = {}
        kwargs = {} if chunk_rows is None else {"chunk_rows": chunk_rows}
        self.observations = RecorderBuffer(OBS_DTYPE, **kwargs)
        self.losses = RecorderBuffer(LOSS_DTYPE, **kwargs)
        self.rounds_sent = 0
        self.late_echoes = 0
        self.max_record_ns = 0
        self.slow_records = 0
        self._last_round = -1

    def sender_tick(self, rnd, now_mono_ns, now_wall_us):
        """Open round ``rnd``: one probe and one pending entry per node, self included."""
        if rnd <= self._last_round:
            raise ValueError(f"round {rnd} does not advance past {self._last_round}")
        self._last_round = rnd
        probe = ProbeMessage(self.self_id, rnd, self.payload)
        out = []
        for receiver in self.targets:
            entry = PendingEntry(receiver, rnd, now_mono_ns, now_wall_us)
            self.pending[(receiver, rnd)] = entry
            out.append((probe, entry))
        self.rounds_sent += 1
        return out

    def restamp(self, receiver, rnd, send_mono_ns):
        """Move a pending entry's send time to the instant its probe was written."""
        key = (receiver, rnd)
        entry = self.pending.get(key)
        if entry is not None:
            self.pending[key] = entry._replace(send_mono_ns=send_mono_ns)

    def handle_probe(self, probe):
        return make_echo(probe, self.self_id)

    def handle_echo(self, echo, now_mono_ns):
        """Match an echo against the pending table.

        Returns the Observation, or None when no probe is pending for it
        (late after expiry, or a duplicate); those are counted as late echoes.
        """
        if echo.origin_sender != self.self_id:
            raise ForeignEcho(f"echo for node {echo.origin_sender} reached node {self.self_id}")
        entry = self.pending.pop((echo.responder, echo.round), None)
        if entry is None:
            self.late_echoes += 1
            return None
        rtt_us = max(0, (now_mono_ns - entry.send_mono_ns) // 1000)
        return Observation(self.self_id, echo.responder, echo.round, entry.send_wall_ts_us, rtt_us)

    def expire_pending(self, now_mono_ns, pending_expiry_s=None, now_wall_us=None):
        """Drop pending entries older than the expiry and record them as losses."""
        if pending_expiry_s is None:
            pending_expiry_s = self.cfg.pending_expiry_s
        if now_wall_us is None:
            now_wall_us = time.time_ns() // 1000
        limit_ns = int(pending_expiry_s * 1e9)
        expired = []
        pending = self.pending
        # insertion order is send order, so the oldest entries come first
        while pending:
            key = next(iter(pending))
            entry = pending[key]
            if now_mono_ns - entry.send_mono_ns <= limit_ns:
                break
            del pending[key]
            loss = LossRecord(entry.receiver, entry.round, now_wall_us)
            self.losses.record(loss)
            expired.append(loss)
        return expired

    def record(self, obs):
        t0 = time.perf_counter_ns()
        self.observations.record(obs)
        dt = time.perf_counter_ns() - t0
        if dt > self.max_record_ns:
            self.max_record_ns = dt
        if dt > SLOW_RECORD_NS:
            self.slow_records += 1

    def status(self):
        obs = self.observations
        return {
            "rounds_sent": self.rounds_sent,
            "observations": obs.recorded_count,
            "losses": self.losses.recorded_count,
            "late_echoes": self.late_echoes,
            "pending": len(self.pending),
            "buffer_depth": obs.in_buffer_count,
            "flushed": obs.flushed_count,
            "max_record_us": self.max_record_ns / 1000,
            "slow_records": self.slow_records,
        }

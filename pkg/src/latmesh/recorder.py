"""Compact in-memory observation buffer and its CSV flushing.

Observations are stored in fixed-size numpy chunks with a packed 32-byte row
layout, so memory per observation stays far below the 52-byte ceiling and no
reallocation copies happen as the buffer grows. A single appender and a
single flusher may run concurrently: the appender never takes a lock except
when it rolls over to a fresh chunk, and the flusher hands off the prefix
recorded so far without touching rows the appender may still write.
"""

from __future__ import annotations

import os
import threading
from typing import NamedTuple

import numpy as np

from .errors import BufferClosed, SinkFailure

OBS_DTYPE = np.dtype([
    ("sender", "<u4"),
    ("receiver", "<u4"),
    ("round", "<u8"),
    ("send_wall_ts_us", "<i8"),
    ("rtt_us", "<i8"),
])
LOSS_DTYPE = np.dtype([
    ("receiver", "<u4"),
    ("round", "<u8"),
    ("expired_at_wall_us", "<i8"),
])
OBS_COLUMNS = OBS_DTYPE.names
LOSS_COLUMNS = LOSS_DTYPE.names

OBSERVATION_BUDGET_BYTES = 52

DEFAULT_CHUNK_ROWS = 1 << 16


class Observation(NamedTuple):
    sender: int
    receiver: int
    round: int
    send_wall_ts_us: int
    rtt_us: int


class LossRecord(NamedTuple):
    receiver: int
    round: int
    expired_at_wall_us: int


class RecorderBuffer:
    """Append-only chunked buffer of fixed-layout records."""

    def __init__(self, dtype=OBS_DTYPE, chunk_rows=DEFAULT_CHUNK_ROWS):
        self.dtype = np.dtype(dtype)
        self.chunk_rows = chunk_rows
        self._lock = threading.Lock()
        self._full = []
        self._cur = np.empty(chunk_rows, self.dtype)
        self._n = 0
        # flusher-side cursor into the chunk that was current at the last take
        self._taken_chunk = None
        self._taken_off = 0
        self._retry = []
        self.recorded_count = 0
        self.flushed_count = 0
        self.closed = False

    def record(self, row):
        if self.closed:
            raise BufferClosed("recorder is closed")
        cur = self._cur
        n = self._n
        cur[n] = row
        n += 1
        if n == self.chunk_rows:
            fresh = np.empty(self.chunk_rows, self.dtype)
            with self._lock:
                self._full.append(cur)
                self._cur = fresh
                self._n = 0
        else:
            self._n = n
        self.recorded_count += 1

    @property
    def in_buffer_count(self):
        return self.recorded_count - self.flushed_count

    @property
    def nbytes(self):
        """Bytes held by allocated chunks (the dominant memory cost)."""
        with self._lock:
            chunks = len(self._full) + 1
        return chunks * self.chunk_rows * self.dtype.itemsize

    def take(self):
        """Hand off everything recorded since the previous take.

        Returns a list of array views. Rows recorded while the caller
        processes them are not included and stay for the next take.
        """
        with self._lock:
            full, self._full = self._full, []
            cur, n = self._cur, self._n
        parts = list(self._retry)
        self._retry = []
        for chunk in full:
            start = self._taken_off if chunk is self._taken_chunk else 0
            if start < len(chunk):
                parts.append(chunk[start:])
        start = self._taken_off if cur is self._taken_chunk else 0
        if n > start:
            parts.append(cur[start:n])
        self._taken_chunk, self._taken_off = cur, n
        return parts

    def restore(self, parts):
        """Put back parts from a failed flush; they are handed out first next time."""
        self._retry = list(parts) + self._retry

    def snapshot(self):
        """Copy of all rows not yet flushed, without consuming them (tests, FETCH in memory mode)."""
        parts = self.take()
        self.restore(parts)
        if not parts:
            return np.empty(0, self.dtype)
        return np.concatenate(parts)

    def close(self):
        self.closed = True


def format_csv_rows(parts):
    lines = []
    for part in parts:
        for row in part.tolist():
            lines.append(",".join(map(str, row)))
    if not lines:
        return b""
    return ("\n".join(lines) + "\n").encode()


class CsvSink:
    """Append-only CSV file. The header is written when the sink is created."""

    def __init__(self, path, columns, truncate=True):
        self.path = os.fspath(path)
        self.columns = tuple(columns)
        if truncate or not os.path.exists(self.path):
            with open(self.path, "wb") as f:
                f.write((",".join(self.columns) + "\n").encode())

    def append(self, parts):
        data = format_csv_rows(parts)
        if data:
            with open(self.path, "ab") as f:
                f.write(data)


def flush(buffer, sink):
    """Move the buffered prefix to ``sink``; returns the number of rows flushed.

    On failure the rows go back into the buffer and SinkFailure is raised.
    """
    parts = buffer.take()
    count = sum(len(p) for p in parts)
    if count == 0:
        return 0
    try:
        sink.append(parts)
    except Exception as exc:
        buffer.restore(parts)
        raise SinkFailure(str(exc)) from exc
    buffer.flushed_count += count
    return count

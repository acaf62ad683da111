import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latmesh.errors import BufferClosed, SinkFailure
from latmesh.recorder import OBS_COLUMNS, OBS_DTYPE, CsvSink, Observation, RecorderBuffer, flush


def read_rows(path):
    lines = open(path).read().splitlines()
    assert lines[0] == ",".join(OBS_COLUMNS)
    return [tuple(int(x) for x in line.split(",")) for line in lines[1:]]


def obs(i):
    return Observation(1, 2, i, 1_700_000_000_000_000 + i, 100 + i)


def test_row_layout_is_compact():
    assert OBS_DTYPE.itemsize == 32


def test_empty_flush(tmp_path):
    buf = RecorderBuffer()
    sink = CsvSink(tmp_path / "o.csv", OBS_COLUMNS)
    assert flush(buf, sink) == 0
    assert read_rows(sink.path) == []


def test_flush_ten(tmp_path):
    buf = RecorderBuffer()
    for i in range(10):
        buf.record(obs(i))
    sink = CsvSink(tmp_path / "o.csv", OBS_COLUMNS)
    assert flush(buf, sink) == 10
    assert buf.in_buffer_count == 0
    assert read_rows(sink.path) == [tuple(obs(i)) for i in range(10)]


class BrokenSink:
    def append(self, parts):
        raise OSError("disk full")


def test_sink_failure_keeps_rows(tmp_path):
    buf = RecorderBuffer()
    for i in range(5):
        buf.record(obs(i))
    with pytest.raises(SinkFailure):
        flush(buf, BrokenSink())
    assert buf.flushed_count == 0 and buf.recorded_count == 5
    buf.record(obs(5))
    sink = CsvSink(tmp_path / "o.csv", OBS_COLUMNS)
    assert flush(buf, sink) == 6
    assert read_rows(sink.path) == [tuple(obs(i)) for i in range(6)]


def test_closed():
    buf = RecorderBuffer()
    buf.close()
    with pytest.raises(BufferClosed):
        buf.record(obs(0))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.lists(st.integers(0, 40), max_size=12))
def test_chunked_take_preserves_order(chunk_rows, batches):
    buf = RecorderBuffer(chunk_rows=chunk_rows)
    out = []
    i = 0
    for n in batches:
        for _ in range(n):
            buf.record(obs(i))
            i += 1
        for part in buf.take():
            out.extend(part["round"].tolist())
    for part in buf.take():
        out.extend(part["round"].tolist())
    assert out == list(range(i))


def test_memory_per_observation():
    buf = RecorderBuffer(chunk_rows=1024)
    for i in range(10_000):
        buf.record(obs(i))
    assert buf.nbytes / buf.recorded_count <= 52


class SlowSink:
    def __init__(self):
        self.rows = []
        self.entered = threading.Event()
        self.release = threading.Event()

    def append(self, parts):
        self.entered.set()
        self.release.wait(5)
        for p in parts:
            self.rows.extend(p["round"].tolist())


def test_record_during_flush():
    buf = RecorderBuffer(chunk_rows=64)
    for i in range(100):
        buf.record(obs(i))
    sink = SlowSink()
    t = threading.Thread(target=flush, args=(buf, sink))
    t.start()
    assert sink.entered.wait(5)
    for i in range(100, 300):  # must not wait for the stalled sink
        buf.record(obs(i))
    sink.release.set()
    t.join()
    flush(buf, sink)
    assert sink.rows == list(range(300))
    assert buf.recorded_count == buf.flushed_count == 300


def test_concurrent_appender_and_flusher():
    buf = RecorderBuffer(chunk_rows=257)
    sink = SlowSink()
    sink.release.set()
    done = threading.Event()

    def flusher():
        while not done.is_set():
            flush(buf, sink)
        flush(buf, sink)

    t = threading.Thread(target=flusher)
    t.start()
    for i in range(50_000):
        buf.record(obs(i))
    done.set()
    t.join()
    assert sink.rows == list(range(50_000))
    assert np.array_equal(buf.snapshot(), np.empty(0, OBS_DTYPE))

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latmesh.errors import ForeignEcho
from latmesh.probe import ProbeCore, make_payload
from latmesh.recorder import Observation
from latmesh.wire import EchoMessage, ProbeMessage

from conftest import make_config, node

MS = 1_000_000


def core_for(n=3, self_id=1, **kw):
    kw.setdefault("payload", 16)
    return ProbeCore(make_config([node(i) for i in range(1, n + 1)], **kw), self_id)


def echo(responder, rnd, origin=1):
    return EchoMessage(responder, origin, rnd, b"")


def test_fan_out_includes_self():
    core = core_for(8, self_id=4)
    out = core.sender_tick(42, 0, 0)
    assert len(out) == 8
    assert {p.round for p, _ in out} == {42}
    assert {p.sender for p, _ in out} == {4}
    assert sorted(e.receiver for _, e in out) == list(range(1, 9))
    assert len(core.pending) == 8


def test_rounds_must_advance():
    core = core_for()
    core.sender_tick(0, 0, 0)
    core.sender_tick(1, 0, 0)
    with pytest.raises(ValueError):
        core.sender_tick(1, 0, 0)


def test_payload_length():
    core = core_for(payload=100)
    probe, _ = core.sender_tick(0, 0, 0)[0]
    assert len(probe.payload) == 100
    assert make_payload(0) == b""


def test_rtt_is_clock_difference():
    core = core_for()
    core.sender_tick(0, 5_000_000, 123)
    obs = core.handle_echo(echo(2, 0), 5_000_000 + 500_000)
    assert obs == Observation(1, 2, 0, 123, 500)


def test_duplicate_echo_not_recorded_twice():
    core = core_for()
    core.sender_tick(0, 0, 0)
    assert core.handle_echo(echo(2, 0), 1000) is not None
    assert core.handle_echo(echo(2, 0), 2000) is None
    assert core.late_echoes == 1


def test_late_echo_after_expiry():
    core = core_for(pending_expiry_s=1)
    core.sender_tick(0, 0, 0)
    losses = core.expire_pending(2000 * MS, now_wall_us=99)
    assert len(losses) == 3 and not core.pending
    assert {loss.receiver for loss in losses} == {1, 2, 3}
    assert all(loss.expired_at_wall_us == 99 for loss in losses)
    assert core.handle_echo(echo(3, 0), 2001 * MS) is None
    assert core.late_echoes == 1


def test_foreign_echo():
    core = core_for()
    with pytest.raises(ForeignEcho):
        core.handle_echo(echo(2, 0, origin=9), 0)


def test_expiry_boundary():
    core = core_for(pending_expiry_s=1)
    core.sender_tick(0, 0, 0)
    assert core.expire_pending(1000 * MS - 1) == []
    assert core.expire_pending(1000 * MS) == []  # exactly the expiry age is not yet expired
    assert len(core.expire_pending(1000 * MS + 1)) == 3


def test_expire_empty():
    assert core_for().expire_pending(10**15) == []


def test_expiry_is_oldest_first():
    core = core_for(pending_expiry_s=1)
    core.sender_tick(0, 0, 0)
    core.sender_tick(1, 500 * MS, 0)
    expired = core.expire_pending(1200 * MS)
    assert {loss.round for loss in expired} == {0}
    assert len(core.pending) == 3


def test_handle_probe_echoes():
    core = core_for(self_id=2)
    assert core.handle_probe(ProbeMessage(1, 7, b"x")) == EchoMessage(2, 1, 7, b"x")


def test_record_and_read_back():
    core = core_for()
    obs = Observation(1, 2, 3, 4, 5)
    core.record(obs)
    assert tuple(core.observations.snapshot()[0].tolist()) == tuple(obs)
    assert core.status()["observations"] == 1


def test_status_zero_initially():
    st = core_for().status()
    assert all(st[k] == 0 for k in ("rounds_sent", "observations", "losses", "late_echoes", "pending"))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 19), st.integers(1, 4), st.integers(0, 3000)), max_size=200))
def test_conservation_any_echo_order(events):
    """Every probe ends as exactly one observation or one loss; extras are late echoes."""
    core = core_for(4, pending_expiry_s=1)
    for rnd in range(20):
        core.sender_tick(rnd, rnd * 10 * MS, rnd)
    seen = set()
    for rnd, responder, ms in events:
        obs = core.handle_echo(echo(responder, rnd), ms * MS)
        if obs is not None:
            assert (responder, rnd) not in seen
            seen.add((responder, rnd))
            core.record(obs)
    core.expire_pending(10**15, pending_expiry_s=0)
    st = core.status()
    assert st["pending"] == 0
    assert st["observations"] + st["losses"] == st["rounds_sent"] * 4
    assert st["late_echoes"] == len(events) - len(seen)

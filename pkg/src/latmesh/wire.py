"""Binary framing for probe and echo messages.

Every frame is a 4-byte big-endian length prefix followed by a 17-byte
header and the payload::

    [len u32][tag u8][sender u32][origin u32][round u64][payload ...]

Probes carry tag 0x01 and repeat the sender in the origin field. Echoes carry
tag 0x02, the responder in the sender field and the probing node in the
origin field, so an echo can be routed back without any extra state.
"""

from __future__ import annotations

import struct
from typing import NamedTuple

from .errors import BadTag, PayloadTooLarge, Truncated

PROBE = 0x01
ECHO = 0x02

_PREFIX = struct.Struct(">I")
_HEADER = struct.Struct(">BIIQ")
PREFIX_SIZE = _PREFIX.size
HEADER_SIZE = _HEADER.size  # 17: 1 + 4 + 4 + 8
MAX_PAYLOAD = 2**32 - 1 - HEADER_SIZE


class ProbeMessage(NamedTuple):
    sender: int
    round: int
    payload: bytes = b""


class EchoMessage(NamedTuple):
    responder: int
    origin_sender: int
    round: int
    payload: bytes = b""


def _encode(tag, sender, origin, rnd, payload):
    if len(payload) >= MAX_PAYLOAD:
        raise PayloadTooLarge(f"payload of {len(payload)} bytes does not fit a frame")
    body_len = HEADER_SIZE + len(payload)
    return _PREFIX.pack(body_len) + _HEADER.pack(tag, sender, origin, rnd) + bytes(payload)


def _decode(data, expected_tag):
    data = memoryview(data)
    if len(data) < PREFIX_SIZE:
        raise Truncated("missing length prefix")
    (length,) = _PREFIX.unpack_from(data)
    if len(data) - PREFIX_SIZE != length:
        raise Truncated(f"prefix claims {length} bytes, frame carries {len(data) - PREFIX_SIZE}")
    if length < HEADER_SIZE:
        raise Truncated(f"body of {length} bytes is shorter than the header")
    tag, sender, origin, rnd = _HEADER.unpack_from(data, PREFIX_SIZE)
    if tag != expected_tag:
        raise BadTag(f"tag 0x{tag:02x}, expected 0x{expected_tag:02x}")
    return sender, origin, rnd, bytes(data[PREFIX_SIZE + HEADER_SIZE:])


def encode_probe(msg):
    return _encode(PROBE, msg.sender, msg.sender, msg.round, msg.payload)


def decode_probe(data):
    sender, _origin, rnd, payload = _decode(data, PROBE)
    return ProbeMessage(sender, rnd, payload)


def encode_echo(msg):
    return _encode(ECHO, msg.responder, msg.origin_sender, msg.round, msg.payload)


def decode_echo(data):
    responder, origin, rnd, payload = _decode(data, ECHO)
    return EchoMessage(responder, origin, rnd, payload)


def make_echo(probe, responder):
    return EchoMessage(responder, probe.sender, probe.round, probe.payload)


def peek_header(frame):
    """Return ``(tag, sender, origin, round)`` of a complete frame without copying the payload."""
    return _HEADER.unpack_from(frame, PREFIX_SIZE)


class FrameReader:
    """Incremental splitter for a byte stream of frames.

    ``feed`` accepts arbitrary chunks and returns the complete frames
    (prefix included) found so far.
    """

    def __init__(self, max_frame=1 << 24):
        self._buf = bytearray()
        self.max_frame = max_frame

    def feed(self, chunk):
        self._buf += chunk
        frames = []
        buf = self._buf
        pos = 0
        while len(buf) - pos >= PREFIX_SIZE:
            (length,) = _PREFIX.unpack_from(buf, pos)
            if length < HEADER_SIZE or length > self.max_frame:
                raise Truncated(f"implausible frame length {length}")
            end = pos + PREFIX_SIZE + length
            if end > len(buf):
                break
            frames.append(bytes(buf[pos:end]))
            pos = end
        if pos:
            del buf[:pos]
        return frames

    @property
    def pending_bytes(self):
        return len(self._buf)

"""TCP proxies that hold every frame for its modelled one-way delay.

Each ordered node pair (src -> dst) gets its own listening port. src dials
it instead of dst; frames flowing src -> dst are delayed by link (src, dst)
and frames flowing back by link (dst, src). All deliveries go through one
ordered timer queue. Frames are scheduled independently, so a frame with a
long delay does not hold back the frames behind it.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import selectors
import socket
import threading
import time

from .. import wire
from ..errors import WireError
from ..topology import Address
from .model import sample_delay

log = logging.getLogger(__name__)


class DelayScheduler(threading.Thread):
    """Single timer queue delivering ``(due_ns, socket, bytes)`` in due order."""

    def __init__(self):
        super().__init__(daemon=True, name="latmesh-delay")
        self._heap = []
        self._seq = itertools.count()
        self._cond = threading.Condition()
        self._closed = False
        self.delivered = 0

    def schedule(self, due_ns, sock, data):
        item = (due_ns, next(self._seq), sock, data)
        with self._cond:
            heapq.heappush(self._heap, item)
            if self._heap[0] is item:
                self._cond.notify()

    def run(self):
        heap = self._heap
        while True:
            with self._cond:
                while not self._closed and not heap:
                    self._cond.wait()
                if self._closed:
                    return
                due = heap[0][0]
                now = time.monotonic_ns()
                if due > now:
                    self._cond.wait((due - now) / 1e9)
                    continue
                _, _, sock, data = heapq.heappop(heap)
            try:
                sock.sendall(data)
                self.delivered += 1
            except OSError:
                pass

    @property
    def queued(self):
        with self._cond:
            return len(self._heap)

    def close(self):
        with self._cond:
            self._closed = True
            self._heap.clear()
            self._cond.notify_all()


def _nodelay(sock):
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)


class DelayProxy:
    """All proxied connections served by one selector thread.

    Keeping every pump on a single thread (plus the timer thread) matters in
    the one-process harness: each extra Python thread is another contender
    for the interpreter lock that the probe nodes also need.
    """

    def __init__(self, model, rate_hz, host="127.0.0.1"):
        self.model = model
        self.rate_hz = rate_hz
        self.host = host
        self.scheduler = DelayScheduler()
        self.scheduler.start()
        self._selector = selectors.DefaultSelector()
        self._wake_r, self._wake_w = socket.socketpair()
        self._selector.register(self._wake_r, selectors.EVENT_READ, None)
        self._pending_routes = []
        self._sockets = []
        self._lock = threading.Lock()
        self._closed = False
        self._thread = threading.Thread(target=self._serve, daemon=True, name="latmesh-proxy")
        self._thread.start()

    def add_route(self, src, dst, upstream):
        """Listen for src's connection to dst; returns the address src should dial."""
        lsock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        lsock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        lsock.bind((self.host, 0))
        lsock.listen(8)
        with self._lock:
            self._sockets.append(lsock)
            self._pending_routes.append((lsock, (src, dst, upstream)))
        self._wake_w.send(b"x")
        return Address(self.host, lsock.getsockname()[1])

    def _serve(self):
        sel = self._selector
        while not self._closed:
            for key, _ in sel.select():
                if key.data is None:
                    self._wake_r.recv(4096)
                    with self._lock:
                        routes, self._pending_routes = self._pending_routes, []
                    for lsock, route in routes:
                        sel.register(lsock, selectors.EVENT_READ, ("listen", route))
                elif key.data[0] == "listen":
                    self._accept(key.fileobj, *key.data[1])
                else:
                    self._pump(key.fileobj, *key.data[1:])

    def _accept(self, lsock, src, dst, upstream):
        try:
            down, _ = lsock.accept()
        except OSError:
            return
        try:
            up = socket.create_connection(tuple(upstream))
        except OSError as exc:
            log.debug("proxy %s->%s: upstream %s refused: %s", src, dst, upstream, exc)
            down.close()
            return
        _nodelay(down)
        _nodelay(up)
        with self._lock:
            self._sockets.extend((down, up))
        self._selector.register(down, selectors.EVENT_READ, ("conn", wire.FrameReader(), up, (src, dst)))
        self._selector.register(up, selectors.EVENT_READ, ("conn", wire.FrameReader(), down, (dst, src)))

    def _pump(self, rx, reader, tx, link):
        try:
            chunk = rx.recv(65536)
        except OSError:
            chunk = b""
        arrival = time.monotonic_ns()
        if not chunk:
            self._drop(rx, tx)
            return
        try:
            frames = reader.feed(chunk)
        except WireError:
            self._drop(rx, tx)
            return
        for frame in frames:
            rnd = wire.peek_header(frame)[3]
            delay_us = sample_delay(self.model, link, rnd, self.rate_hz)
            self.scheduler.schedule(arrival + delay_us * 1000, tx, frame)

    def _drop(self, *socks):
        for s in socks:
            try:
                self._selector.unregister(s)
            except (KeyError, ValueError):
                pass
            try:
                s.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass

    def close(self):
        self._closed = True
        self.scheduler.close()
        self._wake_w.send(b"x")
        self._thread.join(5)
        with self._lock:
            for s in self._sockets:
                try:
                    s.close()
                except OSError:
                    pass
            self._sockets.clear()
        self._selector.close()
        self._wake_r.close()
        self._wake_w.close()

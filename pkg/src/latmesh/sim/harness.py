"""Virtual cluster: real probe nodes on loopback behind delay proxies."""

from __future__ import annotations

import dataclasses
import ipaddress
import logging
import socket
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..analysis import load_observations, percentile, summarize
from ..controller import ClusterHandle, fetch_all, push_config, start_all, stop_all, wait_stopped
from ..errors import InvalidConfig
from ..node import NodeThread, ProbeNode
from ..topology import Address, ClusterConfig, NodeSpec, TopologyLabel
from .awake import keep_cpu_awake
from .model import LinkModel, sample_delay
from .proxy import DelayProxy

log = logging.getLogger(__name__)

DEFAULT_BUDGET_US = 2000


def pick_free_port(host="127.0.0.1"):
    with socket.socket() as s:
        s.bind((host, 0))
        return s.getsockname()[1]


def _is_loopback(host):
    if host == "localhost":
        return True
    try:
        return ipaddress.ip_address(host).is_loopback
    except ValueError:
        return False


def assign_loopback_ports(cfg):
    """Return ``cfg`` with every port-0 address replaced by a free loopback port.

    Raises InvalidConfig if any node address is not on loopback.
    """
    nodes = []
    for n in cfg.nodes:
        addrs = []
        for addr in (n.data_address, n.control_address):
            if not _is_loopback(addr.host):
                raise InvalidConfig("nodes.data_address", f"{addr} is not a loopback address")
            addrs.append(Address(addr.host, addr.port or pick_free_port(addr.host)))
        nodes.append(dataclasses.replace(n, data_address=addrs[0], control_address=addrs[1]))
    return dataclasses.replace(cfg, nodes=tuple(nodes))


def local_cluster_config(n_nodes, round_rate_hz=100, payload_bytes=1024, duration_s=10,
                         flush_interval_s=30, pending_expiry_s=120, labels=None):
    """An ``n_nodes`` loopback cluster on free ports; all nodes share one subnet unless ``labels`` given."""
    nodes = []
    for i in range(n_nodes):
        label = labels[i] if labels else TopologyLabel("local", "loopback", "az1", "subnet1")
        nodes.append(NodeSpec(
            id=i + 1,
            alias=f"1.{i + 1}",
            data_address=Address("127.0.0.1", pick_free_port()),
            control_address=Address("127.0.0.1", pick_free_port()),
            label=label,
        ))
    return ClusterConfig(tuple(nodes), round_rate_hz, payload_bytes, duration_s,
                         flush_interval_s, pending_expiry_s)


@dataclass
class SimResult:
    dataset: object
    statuses: dict
    manifest: dict
    out_dir: Path
    config: ClusterConfig


def injected_rtt_us(model, sender, receiver, rnd, rate_hz):
    """Delay added to one observation: forward on (sender, receiver), back on (receiver, sender)."""
    return (sample_delay(model, (sender, receiver), rnd, rate_hz)
            + sample_delay(model, (receiver, sender), rnd, rate_hz))


def injected_rtts(dataset, model, rate_hz):
    obs = dataset.observations
    return np.fromiter(
        (injected_rtt_us(model, s, r, rnd, rate_hz)
         for s, r, rnd in zip(obs["sender"].tolist(), obs["receiver"].tolist(), obs["round"].tolist())),
        dtype=np.int64, count=len(obs))


class VirtualCluster:
    """Hosts one ProbeNode per NodeSpec in this process, every data link proxied.

    Use as a context manager; ``run`` performs a full LOAD/START/STOP/FETCH
    cycle and may be called repeatedly.
    """

    def __init__(self, cfg, model=None, work_dir=None, sink_factory=None):
        self.cfg = assign_loopback_ports(cfg)
        self.model = model or LinkModel.zero()
        self._tmp = None
        if work_dir is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="latmesh-sim-")
            work_dir = self._tmp.name
        self.work_dir = Path(work_dir)
        self.sink_factory = sink_factory
        self.proxy = None
        self.threads = []
        self._runs = 0

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.close()

    def start(self):
        cfg = self.cfg
        self.proxy = DelayProxy(self.model, cfg.round_rate_hz)
        for spec in cfg.nodes:
            overrides = {peer.id: self.proxy.add_route(spec.id, peer.id, peer.data_address)
                         for peer in cfg.nodes}
            node = ProbeNode(cfg, spec.id, self.work_dir / f"node_{spec.id}",
                             dial_overrides=overrides, sink_factory=self.sink_factory)
            self.threads.append(NodeThread(node))
        for t in self.threads:
            t.start()
        for t in self.threads:
            t.wait_ready()

    @property
    def nodes(self):
        return {t.node.self_id: t.node for t in self.threads}

    def run(self, duration_s=None, out_dir=None, ready_timeout_s=20.0):
        cfg = self.cfg
        if duration_s is not None:
            cfg = dataclasses.replace(cfg, duration_s=duration_s)
        self._runs += 1
        out_dir = Path(out_dir) if out_dir else self.work_dir / f"run_{self._runs}"
        with ClusterHandle(cfg, timeout=30.0) as handle:
            push_config(handle, cfg)
            start_all(handle, ready_timeout_s=ready_timeout_s)
            time.sleep(cfg.duration_s)
            wait_stopped(handle, timeout_s=cfg.pending_expiry_s + 30.0)
            statuses = stop_all(handle)
            manifest = fetch_all(handle, out_dir)
        dataset = load_observations(out_dir, cfg)
        return SimResult(dataset, statuses, manifest, out_dir, cfg)

    def close(self):
        for t in self.threads:
            t.stop()
        self.threads = []
        if self.proxy is not None:
            self.proxy.close()
            self.proxy = None
        if self._tmp is not None:
            self._tmp.cleanup()
            self._tmp = None


def run_virtual_cluster(cfg, model, duration_s, out_dir=None, work_dir=None, sink_factory=None,
                        keep_awake=False):
    """Launch, run for ``duration_s``, fetch and load; returns a SimResult.

    ``keep_awake`` runs a lowest-priority spinner per CPU for the duration,
    see ``keep_cpu_awake``.
    """
    with keep_cpu_awake(keep_awake):
        with VirtualCluster(cfg, model, work_dir=work_dir, sink_factory=sink_factory) as vc:
            result = vc.run(duration_s, out_dir=out_dir)
    return result


@dataclass
class Calibration:
    budget_us: float
    baseline: object  # StatsSummary of null-injection RTTs
    floor_us: float


def calibrate_overhead_budget(n_nodes=3, round_rate_hz=100, duration_s=10, floor_us=DEFAULT_BUDGET_US,
                              work_dir=None, keep_awake=False):
    """Measure the stack + harness overhead with a zero-delay run.

    The budget is the null run's p99 RTT, never below ``floor_us``.
    """
    cfg = local_cluster_config(n_nodes, round_rate_hz=round_rate_hz, payload_bytes=1024,
                               duration_s=duration_s, flush_interval_s=5, pending_expiry_s=10)
    with tempfile.TemporaryDirectory(prefix="latmesh-cal-") as tmp:
        result = run_virtual_cluster(cfg, LinkModel.zero(), duration_s, work_dir=work_dir or tmp,
                                     keep_awake=keep_awake)
        rtt = result.dataset.rtt_us
        baseline = summarize(rtt)
        p99 = percentile(rtt, 99)
    return Calibration(max(float(floor_us), float(p99)), baseline, floor_us)

"""Cluster configuration, node labels and pair classification."""

from __future__ import annotations

import enum
import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

from .errors import InvalidConfig, MalformedConfig

DEFAULT_FLUSH_INTERVAL_S = 30.0
DEFAULT_PENDING_EXPIRY_S = 120.0

_NODE_KEYS = {"id", "alias", "data_address", "control_address", "cloud", "region", "az", "subnet"}
_NODE_REQUIRED = _NODE_KEYS - {"alias"}
_TOP_KEYS = {"nodes", "round_rate_hz", "payload_bytes", "flush_interval_s", "pending_expiry_s", "duration_s"}
_TOP_REQUIRED = {"nodes", "round_rate_hz", "payload_bytes", "duration_s"}


class Address(NamedTuple):
    host: str
    port: int

    def __str__(self):
        return f"{self.host}:{self.port}"

    @classmethod
    def parse(cls, text, where="address"):
        if not isinstance(text, str) or ":" not in text:
            raise InvalidConfig(where, f"expected 'host:port', got {text!r}")
        host, _, port = text.rpartition(":")
        host = host.strip("[]")
        try:
            port = int(port)
        except ValueError:
            raise InvalidConfig(where, f"bad port in {text!r}") from None
        if not host or not 0 <= port <= 65535:
            raise InvalidConfig(where, f"bad host or port in {text!r}")
        return cls(host, port)


@dataclass(frozen=True)
class TopologyLabel:
    cloud: str
    region: str
    az: str
    subnet: str

    def __post_init__(self):
        for name in ("cloud", "region", "az", "subnet"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value:
                raise InvalidConfig(name, "must be a non-empty string")


@dataclass(frozen=True)
class NodeSpec:
    id: int
    data_address: Address
    control_address: Address
    label: TopologyLabel
    alias: str = ""

    @property
    def name(self):
        return self.alias or str(self.id)


@dataclass(frozen=True)
class ClusterConfig:
    nodes: tuple[NodeSpec, ...]
    round_rate_hz: float
    payload_bytes: int
    duration_s: float
    flush_interval_s: float = DEFAULT_FLUSH_INTERVAL_S
    pending_expiry_s: float = DEFAULT_PENDING_EXPIRY_S
    _index: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        validate(self)
        object.__setattr__(self, "_index", {n.id: n for n in self.nodes})

    @property
    def node_ids(self):
        return [n.id for n in self.nodes]

    def node(self, node_id):
        try:
            return self._index[node_id]
        except KeyError:
            raise KeyError(f"node {node_id} not in config") from None

    def __contains__(self, node_id):
        return node_id in self._index

    def to_dict(self):
        return {
            "nodes": [
                {
                    "id": n.id,
                    "alias": n.alias,
                    "data_address": str(n.data_address),
                    "control_address": str(n.control_address),
                    "cloud": n.label.cloud,
                    "region": n.label.region,
                    "az": n.label.az,
                    "subnet": n.label.subnet,
                }
                for n in self.nodes
            ],
            "round_rate_hz": self.round_rate_hz,
            "payload_bytes": self.payload_bytes,
            "flush_interval_s": self.flush_interval_s,
            "pending_expiry_s": self.pending_expiry_s,
            "duration_s": self.duration_s,
        }

    def to_json(self):
        """Canonical single-line JSON; the digest is computed over this."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def validate(cfg):
    if not cfg.nodes:
        raise InvalidConfig("nodes", "at least one node is required")
    if not (isinstance(cfg.round_rate_hz, (int, float)) and math.isfinite(cfg.round_rate_hz)
            and cfg.round_rate_hz > 0):
        raise InvalidConfig("round_rate_hz", "must be a positive number")
    if isinstance(cfg.payload_bytes, bool) or not isinstance(cfg.payload_bytes, int) or cfg.payload_bytes < 0:
        raise InvalidConfig("payload_bytes", "must be a non-negative integer")
    if not cfg.duration_s > 0:
        raise InvalidConfig("duration_s", "must be positive")
    if not cfg.flush_interval_s >= 0:
        raise InvalidConfig("flush_interval_s", "must be >= 0 (0 = memory-only)")
    if not cfg.pending_expiry_s > 10.0 / cfg.round_rate_hz:
        raise InvalidConfig("pending_expiry_s", "must exceed 10 round intervals")

    seen_ids, seen_aliases, seen_addrs = set(), set(), set()
    for n in cfg.nodes:
        if isinstance(n.id, bool) or not isinstance(n.id, int) or not 0 <= n.id < 2**32:
            raise InvalidConfig("nodes.id", f"{n.id!r} is not an unsigned 32-bit integer")
        if n.id in seen_ids:
            raise InvalidConfig("nodes.id", f"duplicate node id {n.id}")
        seen_ids.add(n.id)
        if n.alias:
            if n.alias in seen_aliases:
                raise InvalidConfig("nodes.alias", f"duplicate alias {n.alias!r}")
            seen_aliases.add(n.alias)
        if n.data_address == n.control_address:
            raise InvalidConfig("nodes.control_address", f"node {n.id} reuses its data address")
        for addr in (n.data_address, n.control_address):
            if addr in seen_addrs:
                raise InvalidConfig("nodes.data_address", f"address {addr} used twice")
            seen_addrs.add(addr)


def config_from_dict(doc):
    if not isinstance(doc, dict):
        raise MalformedConfig("config document must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise InvalidConfig(sorted(unknown)[0], "unknown key")
    missing = _TOP_REQUIRED - set(doc)
    if missing:
        raise InvalidConfig(sorted(missing)[0], "missing")
    if not isinstance(doc["nodes"], list):
        raise MalformedConfig("'nodes' must be an array")

    nodes = []
    for i, raw in enumerate(doc["nodes"]):
        if not isinstance(raw, dict):
            raise MalformedConfig(f"nodes[{i}] must be an object")
        unknown = set(raw) - _NODE_KEYS
        if unknown:
            raise InvalidConfig(f"nodes[{i}].{sorted(unknown)[0]}", "unknown key")
        missing = _NODE_REQUIRED - set(raw)
        if missing:
            raise InvalidConfig(f"nodes[{i}].{sorted(missing)[0]}", "missing")
        alias = raw.get("alias", "")
        if not isinstance(alias, str):
            raise InvalidConfig(f"nodes[{i}].alias", "must be a string")
        nodes.append(NodeSpec(
            id=raw["id"],
            alias=alias,
            data_address=Address.parse(raw["data_address"], f"nodes[{i}].data_address"),
            control_address=Address.parse(raw["control_address"], f"nodes[{i}].control_address"),
            label=TopologyLabel(raw["cloud"], raw["region"], raw["az"], raw["subnet"]),
        ))

    def number(key, default=None):
        value = doc.get(key, default)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidConfig(key, "must be a number")
        return value

    return ClusterConfig(
        nodes=tuple(nodes),
        round_rate_hz=number("round_rate_hz"),
        payload_bytes=doc["payload_bytes"],
        duration_s=number("duration_s"),
        flush_interval_s=number("flush_interval_s", DEFAULT_FLUSH_INTERVAL_S),
        pending_expiry_s=number("pending_expiry_s", DEFAULT_PENDING_EXPIRY_S),
    )


def parse_config(text):
    """Parse a JSON cluster config document into a validated ClusterConfig."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedConfig(f"not valid JSON: {exc}") from None
    return config_from_dict(doc)


def load_config(path):
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())


class PairClass(enum.Enum):
    SELF_LOOP = "Self Loop"
    SAME_SUBNET = "Same Subnet"
    CROSS_SUBNET = "Cross Subnet"
    CROSS_AZ = "Cross AZ"
    CROSS_REGION = "Cross Region"

    @classmethod
    def parse(cls, text):
        key = text.strip().lower().replace("-", " ").replace("_", " ")
        for member in cls:
            if key in (member.value.lower(), member.name.lower().replace("_", " ")):
                return member
        if key in ("self", "selfloop"):
            return cls.SELF_LOOP
        raise ValueError(f"unknown pair class {text!r}")


# Row order of the statistics table.
CLASS_ORDER = (
    PairClass.SAME_SUBNET,
    PairClass.CROSS_SUBNET,
    PairClass.CROSS_AZ,
    PairClass.CROSS_REGION,
    PairClass.SELF_LOOP,
)


def classify_pair(a, b, same_node):
    if same_node:
        return PairClass.SELF_LOOP
    if (a.cloud, a.region) != (b.cloud, b.region):
        return PairClass.CROSS_REGION
    if a.az != b.az:
        return PairClass.CROSS_AZ
    if a.subnet != b.subnet:
        return PairClass.CROSS_SUBNET
    return PairClass.SAME_SUBNET


def estimate_traffic(cfg):
    """Payload bytes per second leaving (and, symmetrically, entering) one node.

    Each node sends its own probe to every node, itself included, and echoes
    every node's probe back, so both terms scale with the full node count.
    Framing overhead is not counted.
    """
    return cfg.round_rate_hz * cfg.payload_bytes * len(cfg.nodes) * 2


class QuorumGroup(NamedTuple):
    label: str
    nodes: tuple[int, ...]


def quorum_groups(cfg):
    """Node triples suitable for quorum-latency analysis.

    Every 3-subset of each subnet holding three or more nodes is emitted as a
    ``same-AZ`` group. For each region spanning at least three AZs, one
    ``cross-AZ`` group takes the first configured node of each of the first
    three AZs.
    """
    groups = []
    by_subnet = {}
    for n in cfg.nodes:
        by_subnet.setdefault(n.label, []).append(n.id)
    for label, ids in by_subnet.items():
        if len(ids) < 3:
            continue
        where = f"{label.cloud}/{label.region}/{label.az}/{label.subnet}"
        for triple in itertools.combinations(ids, 3):
            groups.append(QuorumGroup(f"same-AZ {where}", triple))

    first_per_az = {}
    for n in cfg.nodes:
        region = (n.label.cloud, n.label.region)
        azs = first_per_az.setdefault(region, {})
        azs.setdefault(n.label.az, n.id)
    for (cloud, region), azs in first_per_az.items():
        if len(azs) >= 3:
            groups.append(QuorumGroup(f"cross-AZ {cloud}/{region}", tuple(list(azs.values())[:3])))
    return groups

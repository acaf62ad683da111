"""Loading node CSVs and slicing them by pair class, time window and round."""

from __future__ import annotations

import io
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ..errors import ParseError, TopologyMismatch, UnknownNode
from ..recorder import LOSS_COLUMNS, OBS_COLUMNS, OBS_DTYPE
from ..topology import PairClass, classify_pair

LOSS_ROW_DTYPE = np.dtype([
    ("sender", "<u4"),
    ("receiver", "<u4"),
    ("round", "<u8"),
    ("expired_at_wall_us", "<i8"),
])

_LOSS_FILE = re.compile(r"node_(\d+)_loss\.csv$")
_CLASS_CODES = {cls: i for i, cls in enumerate(PairClass)}
_CODE_CLASSES = list(PairClass)


@dataclass
class Dataset:
    observations: np.ndarray
    topology: object
    losses: np.ndarray = field(default_factory=lambda: np.empty(0, LOSS_ROW_DTYPE))

    def __len__(self):
        return len(self.observations)

    @property
    def rtt_us(self):
        return self.observations["rtt_us"]

    def select(self, mask):
        return Dataset(self.observations[mask], self.topology, self.losses)

    def class_codes(self):
        """Pair class index (into ``PairClass`` order) of every observation."""
        obs = self.observations
        codes = np.empty(len(obs), dtype=np.int8)
        if len(obs) == 0:
            return codes
        pairs, inverse = np.unique(
            np.stack([obs["sender"], obs["receiver"]], axis=1), axis=0, return_inverse=True)
        lookup = np.array([_CLASS_CODES[pair_class(self.topology, int(s), int(r))] for s, r in pairs],
                          dtype=np.int8)
        codes[:] = lookup[inverse.ravel()]
        return codes

    def pair_mask(self, a, b, directed=False):
        s, r = self.observations["sender"], self.observations["receiver"]
        mask = (s == a) & (r == b)
        if not directed:
            mask |= (s == b) & (r == a)
        return mask

    def class_mask(self, cls):
        return self.class_codes() == _CLASS_CODES[cls]


def pair_class(topology, sender, receiver):
    return classify_pair(topology.node(sender).label, topology.node(receiver).label, sender == receiver)


def sort_observations(obs):
    order = np.lexsort((obs["round"], obs["sender"], obs["send_wall_ts_us"]))
    return obs[order]


def _read_csv(path, columns, dtype):
    path = os.fspath(path)
    with open(path, "rb") as f:
        header = f.readline().decode("utf-8", "replace").strip()
        if header != ",".join(columns):
            raise ParseError(path, 1, f"expected header {','.join(columns)!r}, got {header!r}")
        body = f.read()
    if not body.strip():
        return np.empty(0, dtype)
    try:
        table = np.loadtxt(io.BytesIO(body), delimiter=",", dtype=np.int64, ndmin=2)
        if table.shape[1] != len(columns):
            raise ValueError(f"expected {len(columns)} columns")
    except ValueError:
        _locate_bad_line(path, body, len(columns))
        raise
    out = np.empty(len(table), dtype)
    for i, name in enumerate(columns):
        out[name] = table[:, i]
    return out


def _locate_bad_line(path, body, ncols):
    for lineno, line in enumerate(body.decode("utf-8", "replace").splitlines(), start=2):
        parts = line.split(",")
        if len(parts) != ncols:
            raise ParseError(path, lineno, f"expected {ncols} fields, got {len(parts)}")
        try:
            [int(p) for p in parts]
        except ValueError:
            raise ParseError(path, lineno, f"non-integer field in {line!r}") from None
    raise ParseError(path, 0, "unparseable file")


def expand_inputs(inputs):
    """Accept files or directories; directories contribute their node CSVs."""
    if isinstance(inputs, (str, os.PathLike)):
        inputs = [inputs]
    files = []
    for item in inputs:
        item = Path(item)
        if item.is_dir():
            files.extend(sorted(item.glob("node_*_obs.csv")))
            files.extend(sorted(item.glob("node_*_loss.csv")))
        else:
            files.append(item)
    return files


def load_observations(files, topology):
    """Merge node CSV files into one Dataset sorted by (send time, sender, round).

    Loss files (``node_<id>_loss.csv``) are recognised by name and header and
    attached as ``Dataset.losses``.
    """
    obs_parts, loss_parts = [], []
    for path in expand_inputs(files):
        with open(path, "rb") as f:
            header = f.readline().decode("utf-8", "replace").strip()
        if header == ",".join(LOSS_COLUMNS):
            m = _LOSS_FILE.search(os.fspath(path))
            if not m:
                raise ParseError(os.fspath(path), 1, "loss file name must be node_<id>_loss.csv")
            rows = _read_csv(path, LOSS_COLUMNS, np.dtype([(n, LOSS_ROW_DTYPE[n]) for n in LOSS_COLUMNS]))
            full = np.empty(len(rows), LOSS_ROW_DTYPE)
            full["sender"] = int(m.group(1))
            for name in LOSS_COLUMNS:
                full[name] = rows[name]
            loss_parts.append(full)
        else:
            obs_parts.append(_read_csv(path, OBS_COLUMNS, OBS_DTYPE))

    obs = np.concatenate(obs_parts) if obs_parts else np.empty(0, OBS_DTYPE)
    losses = np.concatenate(loss_parts) if loss_parts else np.empty(0, LOSS_ROW_DTYPE)
    known = np.array(topology.node_ids, dtype=np.int64)
    for arr, cols in ((obs, ("sender", "receiver")), (losses, ("sender", "receiver"))):
        for col in cols:
            bad = ~np.isin(arr[col].astype(np.int64), known)
            if bad.any():
                raise UnknownNode(f"node {int(arr[col][bad][0])} is not in the topology")
    return Dataset(sort_observations(obs), topology, losses)


def group_by_class(ds):
    codes = ds.class_codes()
    rtt = ds.rtt_us
    return {_CODE_CLASSES[c]: rtt[codes == c] for c in np.unique(codes).tolist()}


class WindowSeries(NamedTuple):
    window_s: float
    starts_us: np.ndarray
    means_us: np.ndarray
    counts: np.ndarray

    def points(self):
        return list(zip(self.starts_us.tolist(), self.means_us.tolist(), self.counts.tolist()))


def filter_pairs(ds, pair=None, cls=None):
    """Restrict to one unordered node pair and/or one pair class."""
    mask = np.ones(len(ds), dtype=bool)
    if pair is not None:
        mask &= ds.pair_mask(*pair)
    if cls is not None:
        mask &= ds.class_mask(cls)
    return ds.select(mask)


def window_series(ds, window_s, pair=None, cls=None):
    """Tumbling-window mean RTT on the send wall clock; empty windows are omitted.

    Windows are anchored at the first send time of the whole dataset, so
    series for different pairs or classes share one window grid.
    """
    if not window_s > 0:
        raise ValueError("window_s must be positive")
    width_us = int(round(window_s * 1_000_000))
    if width_us < 1:
        raise ValueError("window_s must be at least 1 us")
    origin = int(ds.observations["send_wall_ts_us"].min()) if len(ds) else 0
    sub = filter_pairs(ds, pair, cls).observations
    starts = origin + ((sub["send_wall_ts_us"] - origin) // width_us) * width_us
    uniq, inverse, counts = np.unique(starts, return_inverse=True, return_counts=True)
    sums = np.bincount(inverse.ravel(), weights=sub["rtt_us"].astype(np.float64), minlength=len(uniq))
    return WindowSeries(window_s, uniq, sums / np.maximum(counts, 1), counts)


class RoundRecord(NamedTuple):
    sender: int
    round: int
    replies: dict


def rounds(ds, sender, node_set):
    """Per-round replies from ``node_set`` to ``sender``, in round order.

    Rounds known only from loss records appear with fewer (possibly zero) replies.
    """
    members = set(node_set)
    unknown = members - set(ds.topology.node_ids)
    if unknown:
        raise UnknownNode(f"nodes {sorted(unknown)} are not in the topology")
    obs = ds.observations
    sel = obs[(obs["sender"] == sender) & np.isin(obs["receiver"], list(members))]
    by_round = {}
    for _, receiver, rnd, _, rtt in sel.tolist():
        by_round.setdefault(rnd, {})[receiver] = rtt
    lost = ds.losses
    lost = lost[(lost["sender"] == sender) & np.isin(lost["receiver"], list(members))]
    for rnd in lost["round"].tolist():
        by_round.setdefault(rnd, {})
    return [RoundRecord(sender, rnd, by_round[rnd]) for rnd in sorted(by_round)]


def same_topology(a, b):
    def shape(cfg):
        return [(n.id, n.label) for n in cfg.nodes]
    return shape(a) == shape(b)


def merge_runs(runs):
    """Equal-weight union of several runs.

    For each pair class every run contributes the same number of samples,
    the smallest per-run count, taking each run's earliest observations.
    """
    runs = list(runs)
    if not runs:
        raise ValueError("merge_runs needs at least one run")
    topo = runs[0].topology
    for other in runs[1:]:
        if not same_topology(topo, other.topology):
            raise TopologyMismatch("runs were recorded on different topologies")
    if len(runs) == 1:
        return runs[0]
    codes = [r.class_codes() for r in runs]
    parts = []
    for c in range(len(_CODE_CLASSES)):
        take = min(int((cc == c).sum()) for cc in codes)
        if take == 0:
            continue
        for run, cc in zip(runs, codes):
            idx = np.flatnonzero(cc == c)[:take]
            parts.append(run.observations[idx])
    obs = np.concatenate(parts) if parts else np.empty(0, OBS_DTYPE)
    losses = np.concatenate([r.losses for r in runs])
    return Dataset(sort_observations(obs), topo, losses)

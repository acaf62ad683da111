"""Quorum latency: the k-th fastest reply of each round."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..errors import UnknownNode


def quorum_latency(rr, k):
    """k-th smallest reply RTT of one RoundRecord, or None when fewer than k replies arrived."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(rr.replies) < k:
        return None
    return sorted(rr.replies.values())[k - 1]


class QuorumSeries(NamedTuple):
    rounds: np.ndarray
    samples: np.ndarray
    insufficient: int


def quorum_series(ds, sender, node_set, k):
    """Q-k/n latency for every round ``sender`` ran against ``node_set``.

    Rounds with fewer than k replies are left out of ``samples`` and counted
    in ``insufficient``; rounds seen only through loss records count too.
    The sender's own self-loop reply is an ordinary member when the sender
    is in ``node_set``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    members = np.array(sorted(set(node_set)), dtype=np.int64)
    unknown = set(members.tolist()) - set(ds.topology.node_ids)
    if unknown:
        raise UnknownNode(f"nodes {sorted(unknown)} are not in the topology")
    obs = ds.observations
    sel = obs[(obs["sender"] == sender) & np.isin(obs["receiver"], members)]
    order = np.lexsort((sel["rtt_us"], sel["round"]))
    rnds = sel["round"][order]
    rtts = sel["rtt_us"][order]
    uniq, starts, counts = np.unique(rnds, return_index=True, return_counts=True)
    ok = counts >= k
    samples = rtts[starts[ok] + (k - 1)]

    lost = ds.losses
    lost = lost[(lost["sender"] == sender) & np.isin(lost["receiver"], members)]
    silent = np.setdiff1d(np.unique(lost["round"]), uniq)
    insufficient = int((~ok).sum()) + len(silent)
    return QuorumSeries(uniq[ok], samples, insufficient)


def parse_quorum(text):
    """``"2/3"`` -> ``(2, 3)``."""
    k, _, n = text.partition("/")
    k, n = int(k), int(n)
    if not 1 <= k <= n:
        raise ValueError(f"bad quorum {text!r}")
    return k, n

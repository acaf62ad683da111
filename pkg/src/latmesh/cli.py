"""``latmesh`` command line: node daemon, cluster control, analysis, simulation."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .controller import (
    TOPOLOGY_NAME,
    ClusterHandle,
    fetch_all,
    push_config,
    start_all,
    status_all,
    stop_all,
)
from .errors import ClusterError, LatmeshError
from .node import loss_filename, obs_filename, run_node
from .recorder import LOSS_COLUMNS, OBS_COLUMNS
from .topology import PairClass, load_config, quorum_groups

STATE_FILE = Path(".latmesh") / "cluster.json"


def _write_out(text, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# ----- node ---------------------------------------------------------------

def cmd_node(args):
    cfg = load_config(args.config)
    return run_node(cfg, args.id, data_dir=args.data_dir)


# ----- ctl ----------------------------------------------------------------

def _ctl_config(args):
    path = args.config or (STATE_FILE if STATE_FILE.exists() else None)
    if path is None:
        raise SystemExit("no cluster config: pass --config or run 'latmesh ctl load <config.json>' first")
    return load_config(path)


def _print_json(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


def cmd_ctl(args):
    if args.verb == "load":
        cfg = load_config(args.file)
        STATE_FILE.parent.mkdir(exist_ok=True)
        shutil.copyfile(args.file, STATE_FILE)
    else:
        cfg = _ctl_config(args)
    try:
        with ClusterHandle(cfg, timeout=args.timeout) as handle:
            if args.verb == "load":
                result = push_config(handle, cfg)
            elif args.verb == "start":
                result = start_all(handle)
            elif args.verb == "stop":
                result = stop_all(handle)
            elif args.verb == "status":
                result = status_all(handle)
            else:
                result = fetch_all(handle, args.dir)
    except ClusterError as exc:
        _print_json({"ok": False, "verb": exc.verb,
                     "failures": {nid: repr(e) for nid, e in exc.failures.items()},
                     "results": exc.results})
        return 1
    _print_json(result)
    return 0


# ----- analyze ------------------------------------------------------------

def _pair(text):
    a, _, b = text.partition(",")
    return int(a), int(b)


def _load_dataset(args, inputs=None):
    inputs = inputs or args.input
    topo_path = args.topology or Path(inputs[0]) / TOPOLOGY_NAME
    topology = load_config(topo_path)
    return analysis.load_observations(inputs, topology)


def _samples(ds, cls=None, pair=None):
    return analysis.filter_pairs(ds, pair=pair, cls=cls).rtt_us


def _first(values):
    return values[0] if values else None


def cmd_analyze(args):
    verb = args.verb
    if verb == "merge":
        runs = [_load_dataset(args, [d]) for d in args.input]
        merged = analysis.merge_runs(runs)
        if not args.out:
            raise SystemExit("merge needs --out <dir>")
        write_dataset(merged, args.out)
        print(f"merged {len(runs)} runs: {len(merged)} observations -> {args.out}")
        return 0

    ds = _load_dataset(args)
    classes = [PairClass.parse(c) for c in args.cls]
    pairs = [_pair(p) for p in args.pair]

    if verb == "report":
        rep = analysis.report(ds)
        _write_out(rep.to_text() if args.format == "text" else rep.to_csv(), args.out)
    elif verb == "hist":
        h = analysis.histogram(_samples(ds, _first(classes), _first(pairs)), args.bin_width)
        _write_out(_csv(("bin_lower_us", "count"), zip(h.edges.tolist(), h.counts.tolist())), args.out)
    elif verb == "cdf":
        c = analysis.cdf(_samples(ds, _first(classes), _first(pairs)), args.min_fraction)
        _write_out(_csv(("rtt_us", "fraction"), c.points()), args.out)
    elif verb == "window":
        ws = analysis.window_series(ds, args.window_s, pair=_first(pairs), cls=_first(classes))
        rows = [(s, f"{m:.3f}", n) for s, m, n in ws.points()]
        _write_out(_csv(("window_start_wall_us", "mean_rtt_us", "count"), rows), args.out)
    elif verb == "quorum":
        _write_out(_quorum_table(ds, args), args.out)
    elif verb == "ttest":
        groups = [("class", c, _samples(ds, cls=c)) for c in classes]
        groups += [("pair", p, _samples(ds, pair=p)) for p in pairs]
        if len(groups) != 2:
            raise SystemExit("ttest needs exactly two of --class/--pair")
        (_, ga, a), (_, gb, b) = groups
        r = analysis.two_sample_t(a, b)
        name = lambda g: g.value if isinstance(g, PairClass) else f"{g[0]}-{g[1]}"  # noqa: E731
        _write_out(_csv(("a", "b", "n_a", "n_b", "t", "p", "df"),
                        [(name(ga), name(gb), len(a), len(b), repr(r.t_statistic), repr(r.p_value), r.df)]),
                   args.out)
    return 0


def _quorum_table(ds, args):
    k, n = analysis.parse_quorum(args.quorum)
    if args.nodes:
        groups = [("custom", tuple(int(x) for x in args.nodes.split(",")))]
    else:
        groups = [(g.label, g.nodes) for g in quorum_groups(ds.topology) if len(g.nodes) == n]
    header = ("group", "sender", "series", "insufficient") + ("count",) + analysis.stats.TABLE_COLUMNS
    rows = []
    for label, members in groups:
        if len(members) != n:
            raise SystemExit(f"--quorum {args.quorum} does not match a {len(members)}-node set")
        sender = args.sender if args.sender is not None else members[0]
        qs = analysis.quorum_series(ds, sender, members, k)
        obs = ds.observations
        nq = ds.rtt_us[(obs["sender"] == sender) & np.isin(obs["receiver"], [m for m in members if m != sender])]
        for series, samples, insufficient in ((f"Q-{k}/{n}", qs.samples, qs.insufficient), ("NQ", nq, "")):
            if len(samples) == 0:
                continue
            s = analysis.summarize(samples)
            rows.append([label, sender, series, insufficient, s.count] + [_num(v) for v in s.row()])
    return _csv(header, rows)


def _num(v):
    return f"{v:.1f}" if isinstance(v, float) else v


def write_dataset(ds, out_dir):
    """Write a Dataset back out as per-sender node CSVs plus topology.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    obs, losses = ds.observations, ds.losses
    for nid in ds.topology.node_ids:
        mine = obs[obs["sender"] == nid]
        rows = (",".join(map(str, r)) for r in mine[list(OBS_COLUMNS)].tolist())
        (out / obs_filename(nid)).write_text(",".join(OBS_COLUMNS) + "\n" + "".join(r + "\n" for r in rows))
        lost = losses[losses["sender"] == nid]
        rows = (",".join(map(str, r)) for r in lost[list(LOSS_COLUMNS)].tolist())
        (out / loss_filename(nid)).write_text(",".join(LOSS_COLUMNS) + "\n" + "".join(r + "\n" for r in rows))
    (out / TOPOLOGY_NAME).write_text(json.dumps(ds.topology.to_dict(), indent=2) + "\n")


# ----- sim ----------------------------------------------------------------

def cmd_sim(args):
    from .sim import LinkModel, assign_loopback_ports, load_model, local_cluster_config, run_virtual_cluster

    if args.topology:
        import dataclasses

        cfg = assign_loopback_ports(load_config(args.topology))
        if args.nodes is not None and args.nodes != len(cfg.nodes):
            raise SystemExit(f"--nodes {args.nodes} but topology has {len(cfg.nodes)} nodes")
        overrides = {k: v for k, v in (("round_rate_hz", args.rate), ("payload_bytes", args.payload))
                     if v is not None}
        cfg = dataclasses.replace(cfg, **overrides)
    else:
        if args.nodes is None:
            raise SystemExit("sim needs --nodes or --topology")
        cfg = local_cluster_config(args.nodes, round_rate_hz=args.rate or 100,
                                   payload_bytes=1024 if args.payload is None else args.payload,
                                   duration_s=args.duration, flush_interval_s=5, pending_expiry_s=10)
    model = load_model(args.model) if args.model else LinkModel.zero()
    result = run_virtual_cluster(cfg, model, args.duration, out_dir=args.out, keep_awake=args.keep_awake)
    _print_json({"out": str(result.out_dir), "observations": len(result.dataset),
                 "statuses": result.statuses})
    return 0


# ----- parser -------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="latmesh", description="Full-mesh round-trip latency measurement.")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    node = sub.add_parser("node", help="run a probe node daemon")
    node.add_argument("--config", required=True)
    node.add_argument("--id", type=int, required=True)
    node.add_argument("--data-dir", default=None)
    node.set_defaults(func=cmd_node)

    ctl = sub.add_parser("ctl", help="control a running cluster")
    ctl_sub = ctl.add_subparsers(dest="verb", required=True)
    for verb in ("load", "start", "stop", "status", "fetch"):
        sp = ctl_sub.add_parser(verb)
        if verb == "load":
            sp.add_argument("file")
        else:
            sp.add_argument("--config", default=None)
        if verb == "fetch":
            sp.add_argument("dir")
        sp.add_argument("--timeout", type=float, default=30.0)
        sp.set_defaults(func=cmd_ctl)

    an = sub.add_parser("analyze", help="analyze fetched observation files")
    an.add_argument("verb", choices=("report", "hist", "cdf", "window", "quorum", "ttest", "merge"))
    an.add_argument("--input", action="append", required=True, help="directory or CSV file (repeatable)")
    an.add_argument("--topology", default=None, help="cluster config (default: <input>/topology.json)")
    an.add_argument("--class", dest="cls", action="append", default=[])
    an.add_argument("--pair", action="append", default=[], help="idA,idB")
    an.add_argument("--window-s", type=float, default=30.0)
    an.add_argument("--quorum", default="2/3", help="k/n")
    an.add_argument("--nodes", default=None, help="comma-separated quorum members")
    an.add_argument("--sender", type=int, default=None)
    an.add_argument("--bin-width", type=int, default=0, help="histogram bin width in us (0 = auto)")
    an.add_argument("--min-fraction", type=float, default=0.0)
    an.add_argument("--format", choices=("csv", "text"), default="csv")
    an.add_argument("--out", default=None)
    an.set_defaults(func=cmd_analyze)

    sim = sub.add_parser("sim", help="run a virtual cluster over loopback with injected delays")
    sim.add_argument("--nodes", type=int, default=None)
    sim.add_argument("--topology", default=None)
    sim.add_argument("--model", default=None)
    sim.add_argument("--duration", type=float, required=True)
    sim.add_argument("--rate", type=float, default=None)
    sim.add_argument("--payload", type=int, default=None)
    sim.add_argument("--out", required=True)
    sim.add_argument("--keep-awake", action="store_true",
                     help="run a lowest-priority spinner per CPU so idle vCPUs do not halt")
    sim.set_defaults(func=cmd_sim)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except LatmeshError as exc:
        print(f"latmesh: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

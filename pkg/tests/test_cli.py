import json
import signal
import subprocess
import sys
import time

import pytest

from latmesh.cli import main
from latmesh.sim import local_cluster_config


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim") / "run"
    model = tmp_path_factory.mktemp("model") / "model.json"
    model.write_text(json.dumps({
        "seed": 1,
        "default": {"base_delay_us": 0},
        "links": [{"src": 1, "dst": 2, "base_delay_us": 1500, "symmetric": True},
                  {"src": 1, "dst": 3, "base_delay_us": 3000, "symmetric": True}],
    }))
    assert main(["sim", "--nodes", "3", "--model", str(model), "--duration", "2",
                 "--rate", "50", "--out", str(out)]) == 0
    return out


def test_sim_output(sim_dir):
    names = sorted(p.name for p in sim_dir.iterdir())
    assert names == ["manifest.json"] + [f"node_{i}_{k}.csv" for i in (1, 2, 3) for k in ("loss", "obs")] \
        + ["topology.json"]


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr().out


def test_report(sim_dir, capsys):
    code, out = run(capsys, "analyze", "report", "--input", str(sim_dir))
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("group,median,p5,p25,mean")
    assert lines[1].startswith("Same Subnet,")
    assert lines[2].startswith("Self Loop,")


def test_quorum(sim_dir, capsys):
    code, out = run(capsys, "analyze", "quorum", "--input", str(sim_dir), "--quorum", "2/3", "--nodes", "1,2,3")
    assert code == 0
    rows = [line.split(",") for line in out.splitlines()[1:]]
    q = next(r for r in rows if r[2] == "Q-2/3")
    assert int(q[4]) == 100  # one sample per round
    assert int(q[5]) < 5000


def test_window_hist_cdf_ttest(sim_dir, capsys, tmp_path):
    out_file = tmp_path / "w.csv"
    assert main(["analyze", "window", "--input", str(sim_dir), "--window-s", "1", "--pair", "1,2",
                 "--out", str(out_file)]) == 0
    rows = out_file.read_text().splitlines()
    assert rows[0] == "window_start_wall_us,mean_rtt_us,count"
    assert sum(int(r.split(",")[2]) for r in rows[1:]) == 200

    code, out = run(capsys, "analyze", "hist", "--input", str(sim_dir), "--class", "self loop", "--bin-width", "50")
    assert code == 0 and sum(int(r.split(",")[1]) for r in out.splitlines()[1:]) == 300

    code, out = run(capsys, "analyze", "cdf", "--input", str(sim_dir), "--min-fraction", "0.95")
    assert code == 0 and out.splitlines()[-1].endswith(",1.0")

    code, out = run(capsys, "analyze", "ttest", "--input", str(sim_dir), "--pair", "1,2", "--pair", "1,3")
    assert code == 0
    a, b, na, nb, t, p, df = out.splitlines()[1].split(",")
    assert float(t) < 0 and float(df) == 398


def test_merge(sim_dir, capsys, tmp_path):
    out = tmp_path / "merged"
    code, _ = run(capsys, "analyze", "merge", "--input", str(sim_dir), "--input", str(sim_dir), "--out", str(out))
    assert code == 0
    code, text = run(capsys, "analyze", "report", "--input", str(out))
    assert code == 0 and text.splitlines()[1].endswith(",1200")  # 6 ordered pairs x 100 rounds x 2 runs


def test_bad_input_exit_code(tmp_path, capsys):
    (tmp_path / "topology.json").write_text("{}")
    assert main(["analyze", "report", "--input", str(tmp_path)]) != 0


def test_node_daemon_and_ctl(tmp_path, monkeypatch, capsys):
    cfg = local_cluster_config(2, round_rate_hz=20, duration_s=1, flush_interval_s=1, pending_expiry_s=2)
    path = tmp_path / "cluster.json"
    path.write_text(cfg.to_json())
    procs = [subprocess.Popen([sys.executable, "-m", "latmesh", "node", "--config", str(path), "--id", str(i),
                               "--data-dir", str(tmp_path / f"d{i}")]) for i in (1, 2)]
    try:
        monkeypatch.chdir(tmp_path)
        deadline = time.monotonic() + 20
        while True:
            code, out = run(capsys, "ctl", "load", str(path))
            if code == 0 or time.monotonic() > deadline:
                break
            time.sleep(0.2)
        assert code == 0
        assert (tmp_path / ".latmesh" / "cluster.json").exists()
        code, out = run(capsys, "ctl", "start")
        assert code == 0
        time.sleep(1.5)
        for _ in range(50):
            code, out = run(capsys, "ctl", "status")
            if all(st["state"] == "stopped" for st in json.loads(out).values()):
                break
            time.sleep(0.2)
        assert run(capsys, "ctl", "stop")[0] == 0
        code, out = run(capsys, "ctl", "fetch", str(tmp_path / "out"))
        assert code == 0
        manifest = json.loads(out)
        assert sum(e["rows"] for e in manifest["files"] if e["kind"] == "obs") == 2 * 2 * 20
        assert run(capsys, "ctl", "start")[0] == 1  # stopped nodes refuse START
    finally:
        for p in procs:
            p.send_signal(signal.SIGTERM)
        for p in procs:
            assert p.wait(20) == 0


def test_bind_failure_exit_code(tmp_path):
    cfg = local_cluster_config(1)
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    import socket

    with socket.create_server(tuple(cfg.nodes[0].control_address)):
        proc = subprocess.run([sys.executable, "-m", "latmesh", "node", "--config", str(path), "--id", "1",
                               "--data-dir", str(tmp_path / "d")], capture_output=True, timeout=30)
    assert proc.returncode == 2

import json
from pathlib import Path

import pytest

from latmesh.topology import config_from_dict

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def node(i, region="east1", az="az1", subnet="a", cloud="c1", alias=None, port=None):
    port = port or 7000 + 2 * i
    d = {
        "id": i,
        "data_address": f"10.0.0.{i}:{port}",
        "control_address": f"10.0.0.{i}:{port + 1}",
        "cloud": cloud,
        "region": region,
        "az": az,
        "subnet": subnet,
    }
    if alias is not None:
        d["alias"] = alias
    return d


def make_doc(nodes, rate=100, payload=1024, duration=10, **extra):
    return {"nodes": nodes, "round_rate_hz": rate, "payload_bytes": payload, "duration_s": duration, **extra}


def make_config(nodes, **kw):
    return config_from_dict(make_doc(nodes, **kw))


@pytest.fixture
def paper_config():
    return config_from_dict(json.loads((CONFIGS / "cluster_8node.json").read_text()))


@pytest.fixture(scope="session")
def calibration():
    """Machine overhead budget from a zero-delay virtual run (measured once per session)."""
    from latmesh.sim import calibrate_overhead_budget

    return calibrate_overhead_budget(n_nodes=3, round_rate_hz=100, duration_s=10, keep_awake=True)


# Lines collected by test_acceptance.py, one per criterion, shown after the run.
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)

import itertools
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from latmesh.errors import InvalidConfig, MalformedConfig
from latmesh.topology import (
    Address,
    PairClass,
    TopologyLabel,
    classify_pair,
    estimate_traffic,
    parse_config,
    quorum_groups,
)

from conftest import make_config, make_doc, node


def test_single_node_minimal():
    cfg = make_config([node(1)], rate=1, payload=0)
    assert list(cfg.node_ids) == [1]
    assert estimate_traffic(cfg) == 0


def test_defaults_applied():
    cfg = make_config([node(1)])
    assert cfg.flush_interval_s == 30
    assert cfg.pending_expiry_s == 120


def test_duplicate_ids_rejected():
    with pytest.raises(InvalidConfig):
        make_config([node(1), dict(node(2), id=1)])


def test_duplicate_alias_rejected():
    with pytest.raises(InvalidConfig):
        make_config([node(1, alias="x"), node(2, alias="x")])


@pytest.mark.parametrize("field,value", [
    ("round_rate_hz", 0),
    ("round_rate_hz", -1),
    ("payload_bytes", -1),
    ("payload_bytes", 1.5),
    ("duration_s", 0),
])
def test_bad_numbers(field, value):
    doc = make_doc([node(1)])
    doc[field] = value
    with pytest.raises(InvalidConfig) as info:
        parse_config(json.dumps(doc))
    assert info.value.field == field


def test_expiry_must_exceed_ten_periods():
    with pytest.raises(InvalidConfig):
        make_config([node(1)], rate=10, pending_expiry_s=1.0)
    make_config([node(1)], rate=10, pending_expiry_s=1.01)


def test_unknown_and_missing_keys():
    with pytest.raises(InvalidConfig):
        parse_config(json.dumps(dict(make_doc([node(1)]), colour="red")))
    doc = make_doc([node(1)])
    del doc["nodes"][0]["subnet"]
    with pytest.raises(InvalidConfig):
        parse_config(json.dumps(doc))


def test_malformed():
    with pytest.raises(MalformedConfig):
        parse_config("{not json")
    with pytest.raises(MalformedConfig):
        parse_config("[]")


def test_address_reuse_rejected():
    a, b = node(1), node(2)
    b["data_address"] = a["data_address"]
    with pytest.raises(InvalidConfig):
        make_config([a, b])
    c = node(3)
    c["control_address"] = c["data_address"]
    with pytest.raises(InvalidConfig):
        make_config([c])


def test_address_parse():
    assert Address.parse("127.0.0.1:80") == Address("127.0.0.1", 80)
    with pytest.raises(InvalidConfig):
        Address.parse("nohost")
    with pytest.raises(InvalidConfig):
        Address.parse("h:99999")


def test_digest_is_canonical():
    a = make_config([node(1), node(2)])
    b = parse_config(json.dumps(make_doc([node(1), node(2)]), indent=4, sort_keys=True))
    assert a.digest() == b.digest()
    assert a.digest() != make_config([node(1), node(2)], rate=50).digest()
    assert parse_config(a.to_json()) == a


def test_paper_layout(paper_config):
    cfg = paper_config
    assert len(cfg.nodes) == 8
    by_alias = {n.alias: n for n in cfg.nodes}
    east_az1 = [n for n in cfg.nodes if n.label.region == "us-east1" and n.label.az == "us-east1-a"]
    assert len(east_az1) == 4
    assert len({n.label.subnet for n in east_az1}) == 2
    assert len({n.label.az for n in cfg.nodes if n.label.region == "us-east1"}) == 3
    assert len([n for n in cfg.nodes if n.label.region == "us-east1"]) == 6
    assert by_alias["2.1"].label.region != by_alias["3.1"].label.region


LABEL = TopologyLabel("c", "r", "z", "s")


def test_classify():
    assert classify_pair(LABEL, LABEL, True) is PairClass.SELF_LOOP
    assert classify_pair(LABEL, LABEL, False) is PairClass.SAME_SUBNET
    other = TopologyLabel("c", "r2", "z", "s")
    assert classify_pair(LABEL, other, False) is PairClass.CROSS_REGION
    assert classify_pair(LABEL, TopologyLabel("c", "r", "z2", "s"), False) is PairClass.CROSS_AZ
    assert classify_pair(LABEL, TopologyLabel("c", "r", "z", "s2"), False) is PairClass.CROSS_SUBNET
    assert classify_pair(LABEL, TopologyLabel("c2", "r", "z", "s"), False) is PairClass.CROSS_REGION


labels = st.builds(TopologyLabel, *(st.sampled_from("ab") for _ in range(4)))


@given(labels, labels)
def test_classify_symmetric(a, b):
    assert classify_pair(a, b, False) is classify_pair(b, a, False)


def test_paper_pair_classes(paper_config):
    spec = {n.alias: n.label for n in paper_config.nodes}
    assert classify_pair(spec["1.1"], spec["1.4"], False) is PairClass.CROSS_SUBNET
    assert classify_pair(spec["1.1"], spec["1.2"], False) is PairClass.SAME_SUBNET
    assert classify_pair(spec["1.1"], spec["1.5"], False) is PairClass.CROSS_AZ
    assert classify_pair(spec["1.1"], spec["2.1"], False) is PairClass.CROSS_REGION


def test_pair_class_parse():
    assert PairClass.parse("cross-az") is PairClass.CROSS_AZ
    assert PairClass.parse("Self Loop") is PairClass.SELF_LOOP
    assert PairClass.parse("same_subnet") is PairClass.SAME_SUBNET
    with pytest.raises(ValueError):
        PairClass.parse("nearby")


def test_traffic_small():
    assert estimate_traffic(make_config([node(i) for i in (1, 2, 3)], rate=10, payload=100)) == 6000


@given(st.integers(1, 12), st.integers(1, 1000), st.integers(0, 4096))
def test_traffic_formula(n, rate, payload):
    cfg = make_config([node(i) for i in range(1, n + 1)], rate=rate, payload=payload)
    # every node's own fan-out plus one echo for every node's probe
    assert estimate_traffic(cfg) == rate * payload * n + rate * payload * n


def test_quorum_groups_paper(paper_config):
    alias = {n.id: n.alias for n in paper_config.nodes}
    groups = {(g.label.split()[0], tuple(alias[i] for i in g.nodes)) for g in quorum_groups(paper_config)}
    assert ("same-AZ", ("1.1", "1.2", "1.3")) in groups
    assert ("cross-AZ", ("1.1", "1.5", "1.6")) in groups


def test_quorum_groups_empty():
    assert quorum_groups(make_config([node(1), node(2)])) == []
    spread = [node(1, region="r1"), node(2, region="r2"), node(3, region="r3")]
    assert quorum_groups(make_config(spread)) == []


def test_quorum_groups_all_triples():
    cfg = make_config([node(i) for i in range(1, 6)])
    same = [g.nodes for g in quorum_groups(cfg)]
    assert same == list(itertools.combinations(range(1, 6), 3))

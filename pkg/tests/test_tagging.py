import json
from collections import Counter
from itertools import groupby

import numpy as np
import pytest

import oracles
from threatnet.community import Partition
from threatnet.graph import Flavor, NodeId, NodeKind, ThreatNetwork
from threatnet.tagging import (
    PC_MALWARE, PHISHING, PROBING, SPAM, family_hit_table, family_table_csv, load_feeds, node_tags,
    sample_hit_table, tag, top_k,
)

# Published family tables, in their printed row order.
TABLE_BASEBRIDGE = [("Agent", 23), ("Vobfus", 21), ("EgroupDial", 13), ("Badur", 9), ("LMN", 7),
                    ("WBNA", 4), ("Pipibo", 2), ("Blocker", 2), ("Virut", 2)]
TABLE_DREBIN = [("Agent", 1268), ("VBNA", 283), ("Adload", 152), ("EgroupDial", 121),
                ("TrustAsia", 120), ("Vobfus", 88), ("KuPlays", 74), ("Pipibo", 72), ("Sality", 62)]
TABLE_DROIDKUNGFU = [("Agent", 33), ("Adload", 24), ("TrustAsia", 13), ("KuPlays", 11), ("Pipibo", 8),
                     ("FangPlay", 5), ("StartPage", 4), ("Injector", 4), ("Turbobit", 4)]


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


def network(nodes, flavor=Flavor.COMBINED):
    return ThreatNetwork(flavor, nodes, [], [], [])


def test_load_feed_examples(tmp_path):
    spam = write_jsonl(tmp_path / "spam.jsonl", [{"indicator": "bad.com"}, {"indicator": "bad.com"}])
    pc = write_jsonl(tmp_path / "pc.jsonl", [
        {"indicator": "1.2.3.4", "sample": "74529155cc", "family": "Agent"},
        {"indicator": "1.2.3.4", "sample": "74529155cc", "family": "Agent"},
        {"indicator": "1.2.3.4", "family": "Agent"},
    ])
    (tmp_path / "phish.jsonl").write_text('{"domain": "Login.Bank-Fake.com"}\nnot json\n\n')
    probe = write_jsonl(tmp_path / "probe.jsonl", [{"ip": "5.6.7.8"}, {"ip": "5.6.7"}])
    feeds = load_feeds(pc, spam, tmp_path / "phish.jsonl", probe)
    assert feeds.spam == {"bad.com"}
    assert feeds.pc_malware == {"1.2.3.4": {("74529155cc", "Agent")}}
    assert feeds.phishing == {"login.bank-fake.com"}
    assert feeds.probing == {"5.6.7.8"}
    assert feeds.malformed == {PC_MALWARE: 1, SPAM: 0, PHISHING: 1, PROBING: 1}


def test_single_spam_tag(tmp_path):
    feeds = load_feeds(spam=write_jsonl(tmp_path / "s.jsonl", [{"indicator": "bad.com"}]))
    tn = network([NodeId(NodeKind.DOMAIN, "bad.com"), NodeId(NodeKind.DOMAIN, "ok.com")])
    rep = tag(tn, Partition(np.array([0, 1]), 0.0), feeds)
    assert rep.communities[0].events[SPAM] == 1
    assert rep.communities[1].total_events == 0
    assert rep.communities[1].shares() == {}
    assert rep.overall.shares() == {SPAM: 100.0}
    assert rep.node_tags[tn.nodes[0]][0].indicator == "bad.com"


def test_kind_restricted_feeds(tmp_path):
    feeds = load_feeds(phishing=write_jsonl(tmp_path / "p.jsonl", [{"domain": "x.com"}]),
                       probing=write_jsonl(tmp_path / "q.jsonl", [{"ip": "9.9.9.9"}]))
    assert node_tags(NodeId(NodeKind.DOMAIN, "x.com"), feeds)[0].activity == PHISHING
    assert node_tags(NodeId(NodeKind.IP, "9.9.9.9"), feeds)[0].activity == PROBING


def test_suffix_match_is_opt_in(tmp_path):
    feeds = load_feeds(spam=write_jsonl(tmp_path / "s.jsonl", [{"indicator": "bad.com"}]))
    node = NodeId(NodeKind.DOMAIN, "mx.bad.com")
    assert node_tags(node, feeds) == []
    assert [t.indicator for t in node_tags(node, feeds, suffix_match=True)] == ["bad.com"]


def planted_share_fixture(tmp_path):
    """Nodes and feeds planted to produce 56 spam, 40 pc, 3 probing, 1 phishing events."""
    doms = [NodeId(NodeKind.DOMAIN, f"n{i}.planted.com") for i in range(90)]
    ips = [NodeId(NodeKind.IP, f"11.0.0.{i}") for i in range(1, 5)]
    clean = [NodeId(NodeKind.DOMAIN, f"clean{i}.org") for i in range(25)]
    spam = [d.key for d in doms[:56]]                            # 56 spam nodes
    pc = []
    for i, d in enumerate(doms[46:86]):                          # 40 pc nodes, 10 overlap spam
        for k in range(1 + i % 3):                               # several entries per node
            pc.append({"indicator": d.key, "sample": oracles.md5(f"pc{i}-{k}"),
                       "family": ["Agent", "Vobfus", "Adload"][(i + k) % 3]})
    probing = [{"ip": ip.key} for ip in ips[:3]]
    phishing = [{"domain": doms[89].key}]
    # spam entries for unrelated infrastructure must not count
    spam_rows = [{"indicator": k} for k in spam] + [{"indicator": "elsewhere.net"}]
    feeds = load_feeds(write_jsonl(tmp_path / "pc.jsonl", pc), write_jsonl(tmp_path / "spam.jsonl", spam_rows),
                       write_jsonl(tmp_path / "phish.jsonl", phishing), write_jsonl(tmp_path / "probe.jsonl", probing))
    nodes = doms + ips + clean
    return network(nodes), feeds, pc


def test_planted_shares_exact(tmp_path):
    tn, feeds, pc = planted_share_fixture(tmp_path)
    rep = tag(tn, None, feeds)
    assert dict(rep.overall.events) == {SPAM: 56, PC_MALWARE: 40, PROBING: 3, PHISHING: 1}
    assert rep.overall.shares() == {SPAM: 56.0, PC_MALWARE: 40.0, PROBING: 3.0, PHISHING: 1.0}
    # 10 nodes carry two activities; untagged nodes stay out of the denominator
    assert rep.overall.tagged_nodes == 56 + 30 + 3 + 1
    fam = Counter(r["family"] for r in pc)
    assert family_hit_table(rep, 10) == top_k(fam, 10)
    assert sum(h for _, h in sample_hit_table(rep, 1000)) == len(pc)


def test_planted_shares_per_community(tmp_path):
    tn, feeds, _ = planted_share_fixture(tmp_path)
    assign = np.arange(tn.n) % 3
    rep = tag(tn, Partition(assign, 0.0), feeds)
    per = Counter()
    for s in rep.communities.values():
        per.update(s.events)
    assert per == rep.overall.events
    assert set(rep.communities) == {0, 1, 2}


def _check_table(table):
    got = family_hit_table(dict(table), k=len(table))
    assert [h for _, h in got] == [h for _, h in table]
    # rows with distinct hit counts keep the printed order; tied rows match as groups
    for (h, want), (h2, have) in zip(groupby(table, key=lambda r: r[1]), groupby(got, key=lambda r: r[1])):
        assert h == h2
        assert {f for f, _ in want} == {f for f, _ in have}
    return got


def test_family_table_basebridge():
    got = _check_table(TABLE_BASEBRIDGE)
    assert [f for f, _ in got[:6]] == ["Agent", "Vobfus", "EgroupDial", "Badur", "LMN", "WBNA"]
    assert family_hit_table({"Agent": 23, "Vobfus": 21, "EgroupDial": 13}) == TABLE_BASEBRIDGE[:3]


def test_family_table_drebin_exact():
    assert family_hit_table(dict(TABLE_DREBIN), k=9) == TABLE_DREBIN


def test_family_table_droidkungfu():
    _check_table(TABLE_DROIDKUNGFU)


def test_family_table_edge_cases():
    assert family_hit_table({}, 5) == []
    assert family_hit_table({"A": 1, "B": 3}, 10) == [("B", 3), ("A", 1)]
    with pytest.raises(ValueError):
        top_k(Counter(), 0)


def test_report_json_and_csv(tmp_path):
    tn, feeds, _ = planted_share_fixture(tmp_path)
    rep = tag(tn, Partition(np.zeros(tn.n, dtype=int), 0.0), feeds)
    obj = json.loads(json.dumps(rep.to_json(3)))
    assert obj["overall"]["shares"] == {"spam": 56.0, "pc_malware": 40.0, "probing": 3.0, "phishing": 1.0}
    assert len(obj["communities"][0]["top_families"]) == 3
    lines = family_table_csv(rep, 2).split("\n")
    assert lines[0] == "rank,family,hits" and lines[4] == "rank,sample,hits"

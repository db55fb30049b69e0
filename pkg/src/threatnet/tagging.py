"""Correlation of threat-network nodes with PC-malware, spam, phishing and probing feeds."""

from __future__ import annotations

import csv
import io
import json
import logging
from collections import Counter
from dataclasses import dataclass, field

from .graph import NodeId, NodeKind, ThreatNetwork
from .indicators import canonical_domain, parse_ipv4

log = logging.getLogger(__name__)

PC_MALWARE = "pc_malware"
SPAM = "spam"
PHISHING = "phishing"
PROBING = "probing"
ACTIVITIES = (SPAM, PC_MALWARE, PROBING, PHISHING)


def _canon(value) -> str | None:
    if not isinstance(value, str):
        return None
    value = value.strip()
    ip = parse_ipv4(value)
    return ip if ip is not None else canonical_domain(value)


@dataclass
class FeedStore:
    pc_malware: dict = field(default_factory=dict)   # indicator -> set of (sample, family)
    spam: set = field(default_factory=set)
    phishing: set = field(default_factory=set)
    probing: set = field(default_factory=set)
    counts: dict = field(default_factory=dict)       # feed -> records loaded
    malformed: dict = field(default_factory=dict)    # feed -> lines skipped


def _read_jsonl(path, feed, parse, store):
    loaded = bad = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                ok = parse(json.loads(line))
            except (ValueError, TypeError, AttributeError):
                ok = False
            if ok:
                loaded += 1
            else:
                bad += 1
    store.counts[feed] = loaded
    store.malformed[feed] = bad
    if bad:
        log.info("%s feed %s: skipped %d malformed lines", feed, path, bad)


def load_feeds(pc_malware=None, spam=None, phishing=None, probing=None) -> FeedStore:
    """Load whichever feed files are given; missing feeds stay empty."""
    store = FeedStore()

    def pc(obj):
        ind, sample, fam = _canon(obj.get("indicator")), obj.get("sample"), obj.get("family")
        if ind is None or not isinstance(sample, str) or not sample.strip() \
                or not isinstance(fam, str) or not fam.strip():
            return False
        store.pc_malware.setdefault(ind, set()).add((sample.strip().lower(), fam.strip()))
        return True

    def spam_(obj):
        ind = _canon(obj.get("indicator"))
        if ind is None:
            return False
        store.spam.add(ind)
        return True

    def phish(obj):
        d = obj.get("domain")
        d = canonical_domain(d) if isinstance(d, str) else None
        if d is None:
            return False
        store.phishing.add(d)
        return True

    def probe(obj):
        ip = obj.get("ip")
        ip = parse_ipv4(ip.strip()) if isinstance(ip, str) else None
        if ip is None:
            return False
        store.probing.add(ip)
        return True

    for path, feed, fn in ((pc_malware, PC_MALWARE, pc), (spam, SPAM, spam_),
                           (phishing, PHISHING, phish), (probing, PROBING, probe)):
        if path is not None:
            _read_jsonl(path, feed, fn, store)
    return store


@dataclass(frozen=True, order=True)
class Tag:
    activity: str
    indicator: str                # the feed entry that matched
    family: str | None = None     # PC malware only
    sample: str | None = None     # PC malware only


@dataclass
class CommunitySummary:
    community: int | None
    events: Counter = field(default_factory=Counter)     # activity -> matched nodes
    families: Counter = field(default_factory=Counter)   # family -> (node, entry) hits
    samples: Counter = field(default_factory=Counter)    # pc sample -> (node, entry) hits
    tagged_nodes: int = 0

    @property
    def total_events(self) -> int:
        return sum(self.events.values())

    def shares(self) -> dict[str, float]:
        """Percentage of match events per activity; empty when nothing matched."""
        total = self.total_events
        if not total:
            return {}
        return {a: 100.0 * self.events[a] / total for a in ACTIVITIES if self.events[a]}

    def to_json(self, k: int = 10) -> dict:
        return {
            "community": self.community,
            "tagged_nodes": self.tagged_nodes,
            "events": {a: self.events[a] for a in ACTIVITIES},
            "shares": {a: round(v, 6) for a, v in self.shares().items()},
            "top_families": [[f, h] for f, h in top_k(self.families, k)],
            "top_samples": [[s, h] for s, h in top_k(self.samples, k)],
        }


@dataclass
class TagReport:
    node_tags: dict        # NodeId -> tuple of Tag
    communities: dict      # community id -> CommunitySummary
    overall: CommunitySummary

    def to_json(self, k: int = 10) -> dict:
        return {
            "overall": self.overall.to_json(k),
            "communities": [self.communities[c].to_json(k) for c in sorted(self.communities)],
            "nodes": [
                {"node": str(n), "tags": [
                    {key: v for key, v in (("activity", t.activity), ("indicator", t.indicator),
                                           ("family", t.family), ("sample", t.sample)) if v is not None}
                    for t in tags]}
                for n, tags in sorted(self.node_tags.items())
            ],
        }


def _candidates(key: str, kind: NodeKind, suffix_match: bool):
    yield key
    if suffix_match and kind is NodeKind.DOMAIN:
        parts = key.split(".")
        for i in range(1, len(parts) - 1):
            yield ".".join(parts[i:])


def node_tags(node: NodeId, feeds: FeedStore, suffix_match: bool = False) -> list[Tag]:
    tags = set()
    for cand in _candidates(node.key, node.kind, suffix_match):
        for sample, fam in feeds.pc_malware.get(cand, ()):
            tags.add(Tag(PC_MALWARE, cand, fam, sample))
        if cand in feeds.spam:
            tags.add(Tag(SPAM, cand))
        if node.kind is NodeKind.DOMAIN and cand in feeds.phishing:
            tags.add(Tag(PHISHING, cand))
        if node.kind is NodeKind.IP and cand in feeds.probing:
            tags.add(Tag(PROBING, cand))
    return sorted(tags)


def tag(tn: ThreatNetwork, partition, feeds: FeedStore, suffix_match: bool = False) -> TagReport:
    """Match every node against the feeds and aggregate per community.

    A node contributes at most one match event per activity; PC-malware
    family and sample hits count every matching feed entry.
    """
    comm = partition.assignment if partition is not None else None
    per_node = {}
    summaries: dict = {}
    overall = CommunitySummary(None)
    for i, node in enumerate(tn.nodes):
        tags = node_tags(node, feeds, suffix_match)
        c = None if comm is None else int(comm[i])
        summary = summaries.setdefault(c, CommunitySummary(c))
        if not tags:
            continue
        per_node[node] = tuple(tags)
        for s in (summary, overall):
            s.tagged_nodes += 1
            for activity in {t.activity for t in tags}:
                s.events[activity] += 1
            for t in tags:
                if t.activity == PC_MALWARE:
                    s.families[t.family] += 1
                    s.samples[t.sample] += 1
    return TagReport(per_node, summaries, overall)


def top_k(hits: Counter, k: int) -> list[tuple[str, int]]:
    """Top ``k`` entries by descending hits, ties by name."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return sorted(hits.items(), key=lambda kv: (-kv[1], kv[0]))[:k]


def _summary(report) -> CommunitySummary:
    return report.overall if isinstance(report, TagReport) else report


def family_hit_table(report, k: int = 10) -> list[tuple[str, int]]:
    """Top-k PC-malware families by hits.

    ``report`` may be a TagReport (overall table), one CommunitySummary, or
    a plain family -> hits mapping.
    """
    if isinstance(report, (TagReport, CommunitySummary)):
        return top_k(_summary(report).families, k)
    return top_k(Counter(report), k)


def sample_hit_table(report, k: int = 10) -> list[tuple[str, int]]:
    """Top-k PC-malware samples by hits, same conventions as family_hit_table."""
    if isinstance(report, (TagReport, CommunitySummary)):
        return top_k(_summary(report).samples, k)
    return top_k(Counter(report), k)


def family_table_csv(report: TagReport, k: int = 10) -> str:
    fams, samples = family_hit_table(report, k), sample_hit_table(report, k)
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["rank", "family", "hits"])
    for r, (f, h) in enumerate(fams, 1):
        out.writerow([r, f, h])
    out.writerow([])
    out.writerow(["rank", "sample", "hits"])
    for r, (s, h) in enumerate(samples, 1):
        out.writerow([r, s, h])
    return buf.getvalue()

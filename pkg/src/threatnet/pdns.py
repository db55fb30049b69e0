"""Local passive-DNS replica: A-record lookups in both directions and enrichment."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Iterable, Iterator

from .indicators import Kind, NetworkIndicator, canonical_domain, is_routable, parse_ipv4
from .whitelist import EMPTY_DOMAINS, EMPTY_IPS, DomainWhitelist, IpWhitelist, is_whitelisted

log = logging.getLogger(__name__)

DAY = 86400


@dataclass(frozen=True, order=True)
class PdnsRecord:
    rrname: str
    rdata: str
    first_seen: int = 0
    last_seen: int = 0
    count: int = 1

    def __post_init__(self):
        if self.first_seen > self.last_seen:
            raise ValueError(f"first_seen > last_seen for {self.rrname}->{self.rdata}")
        if self.count < 1:
            raise ValueError("count must be >= 1")

    def overlaps(self, window) -> bool:
        if window is None:
            return True
        t0, t1 = window
        return self.first_seen <= t1 and self.last_seen >= t0


class PdnsStore:
    """Dual-indexed, read-only record set.

    Records with the same (rrname, rdata) are merged: the observation
    interval becomes the union hull and counts are summed.
    """

    def __init__(self, records: Iterable[PdnsRecord] = ()):
        merged: dict[tuple[str, str], PdnsRecord] = {}
        for r in records:
            key = (r.rrname, r.rdata)
            old = merged.get(key)
            if old is not None:
                r = PdnsRecord(r.rrname, r.rdata, min(old.first_seen, r.first_seen),
                               max(old.last_seen, r.last_seen), old.count + r.count)
            merged[key] = r
        by_domain: dict[str, list[PdnsRecord]] = {}
        by_ip: dict[str, list[PdnsRecord]] = {}
        for key in sorted(merged):
            r = merged[key]
            by_domain.setdefault(r.rrname, []).append(r)
        for key in sorted(merged, key=lambda k: (k[1], k[0])):
            r = merged[key]
            by_ip.setdefault(r.rdata, []).append(r)
        self.by_domain = {k: tuple(v) for k, v in by_domain.items()}
        self.by_ip = {k: tuple(v) for k, v in by_ip.items()}
        self.skipped = 0
        self.check_consistency()

    def __len__(self) -> int:
        return sum(len(v) for v in self.by_domain.values())

    def records(self) -> Iterator[PdnsRecord]:
        for recs in self.by_domain.values():
            yield from recs

    def check_consistency(self):
        a = {r for recs in self.by_domain.values() for r in recs}
        b = {r for recs in self.by_ip.values() for r in recs}
        if a != b:
            raise AssertionError("passive DNS indices disagree")

    @property
    def latest(self) -> int:
        return max((r.last_seen for r in self.records()), default=0)

    @classmethod
    def from_jsonl(cls, path) -> "PdnsStore":
        """Bulk-load a JSON-lines dump; non-A and malformed records are skipped."""
        skipped = 0

        def gen():
            nonlocal skipped
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = parse_record_line(line)
                    if rec is None:
                        skipped += 1
                    else:
                        yield rec

        store = cls(gen())
        store.skipped = skipped
        if skipped:
            log.info("%s: skipped %d records", path, skipped)
        return store


def parse_record_line(line: str) -> PdnsRecord | None:
    try:
        obj = json.loads(line)
        if obj.get("rrtype", "A") != "A":
            return None
        name = canonical_domain(obj["rrname"])
        ip = parse_ipv4(str(obj["rdata"]).strip())
        if name is None or ip is None:
            return None
        first = int(obj.get("time_first", 0))
        last = int(obj.get("time_last", first))
        return PdnsRecord(name, ip, first, last, int(obj.get("count", 1)))
    except (ValueError, KeyError, TypeError, AttributeError):
        return None


def get_ip(store: PdnsStore, domain: str, window=None) -> set[str]:
    """All addresses ``domain`` resolved to during ``window`` (inclusive [t0, t1])."""
    return {r.rdata for r in store.by_domain.get(domain, ()) if r.overlaps(window)}


def get_domain(store: PdnsStore, ip: str, window=None) -> set[str]:
    """All domains that resolved to ``ip`` during ``window``."""
    return {r.rrname for r in store.by_ip.get(ip, ()) if r.overlaps(window)}


def staleness_window(store: PdnsStore, days: float | None, now: int | None = None):
    """``[now - days, now]`` or None when staleness filtering is off.

    ``now`` defaults to the most recent ``last_seen`` in the store so that a
    run does not depend on the wall clock.
    """
    if days is None:
        return None
    if now is None:
        now = store.latest
    return (int(now - days * DAY), int(now))


def enrich(indicators: Iterable[NetworkIndicator], store: PdnsStore, window=None,
           dw: DomainWhitelist = EMPTY_DOMAINS, iw: IpWhitelist = EMPTY_IPS,
           rounds: int = 1) -> tuple[set[NetworkIndicator], set[tuple[str, str]]]:
    """Expand ``indicators`` through passive DNS.

    Each round resolves the indicators discovered by the previous round
    (the input, for the first round). Newly found indicators that are
    whitelisted or non-routable are discarded together with their edges.
    Returns ``(enriched, resolution_edges)`` where edges are (domain, ip).
    """
    enriched = set(indicators)
    edges: set[tuple[str, str]] = set()
    frontier = set(enriched)
    for _ in range(rounds):
        new = set()
        for ind in sorted(frontier):
            if ind.kind is Kind.DOMAIN:
                found = [(ind.value, ip) for ip in sorted(get_ip(store, ind.value, window))]
            else:
                found = [(d, ind.value) for d in sorted(get_domain(store, ind.value, window))]
            for dom, ip in found:
                other = (NetworkIndicator(Kind.IPV4, ip) if ind.kind is Kind.DOMAIN
                         else NetworkIndicator(Kind.DOMAIN, dom))
                if other not in enriched:
                    if other.kind is Kind.IPV4 and not is_routable(other.value):
                        continue
                    if is_whitelisted(other, dw, iw):
                        continue
                    new.add(other)
                edges.add((dom, ip))
        enriched |= new
        frontier = new
        if not frontier:
            break
    return enriched, edges

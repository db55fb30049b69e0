"""Benign-indicator filtering with top-domain lists and public IP ranges."""

from __future__ import annotations

import bisect
import ipaddress
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

from .indicators import ExtractionResult, Kind, NetworkIndicator, canonical_domain, ip_to_int

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DomainWhitelist:
    entries: frozenset = frozenset()
    top_n: int | None = None
    malformed: int = 0

    def __contains__(self, domain: str) -> bool:
        return domain in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def matches(self, domain: str) -> bool:
        """True if ``domain`` or any parent domain at a label boundary is listed."""
        # Walking every parent (not just the last two labels) is what makes
        # entries of any depth work, e.g. an explicit ``cdn.vendor.net``.
        name = domain
        while True:
            if name in self.entries:
                return True
            dot = name.find(".")
            if dot < 0:
                return False
            name = name[dot + 1:]


@dataclass(frozen=True)
class IpWhitelist:
    cidr_blocks: frozenset = frozenset()
    exact_ips: frozenset = frozenset()
    _ranges: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        nets = sorted(ipaddress.IPv4Network(c, strict=False) for c in self.cidr_blocks)
        object.__setattr__(self, "cidr_blocks", frozenset(str(n) for n in nets))
        ranges = []
        for n in nets:
            lo, hi = int(n.network_address), int(n.broadcast_address)
            if ranges and lo <= ranges[-1][1] + 1:
                ranges[-1] = (ranges[-1][0], max(hi, ranges[-1][1]))
            else:
                ranges.append((lo, hi))
        object.__setattr__(self, "_ranges", tuple(ranges))

    def matches(self, ip: str) -> bool:
        if ip in self.exact_ips:
            return True
        v = ip_to_int(ip)
        i = bisect.bisect_right(self._ranges, (v, float("inf"))) - 1
        return i >= 0 and self._ranges[i][0] <= v <= self._ranges[i][1]

    def __len__(self) -> int:
        return len(self.cidr_blocks) + len(self.exact_ips)


def load_domain_list(path, format: str = "ranked", top_n: int | None = None) -> DomainWhitelist:
    """Load a top-sites list.

    ``format="ranked"`` expects ``rank,domain`` CSV lines (Alexa style);
    ``format="plain"`` one domain per line. ``#`` comments and blank lines are
    skipped, malformed lines are skipped and counted. ``top_n=None`` loads the
    complete list.
    """
    if format not in ("ranked", "plain"):
        raise ValueError(f"unknown list format {format!r}")
    with open(path, encoding="utf-8", errors="replace") as fh:
        return domain_whitelist_from_lines(fh, format, top_n)


def domain_whitelist_from_lines(lines: Iterable[str], format: str = "ranked",
                                top_n: int | None = None) -> DomainWhitelist:
    entries: set = set()
    malformed = 0
    ranked = format == "ranked"
    taken = 0
    for line in lines:
        if top_n is not None and taken >= top_n:
            break
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if ranked:
            rank, sep, name = line.partition(",")
            if not sep or not rank.strip().isdigit():
                malformed += 1
                continue
        else:
            name = line
        canon = canonical_domain(name)
        if canon is None:
            malformed += 1
            continue
        entries.add(canon)
        taken += 1
    if malformed:
        log.info("skipped %d malformed whitelist lines", malformed)
    return DomainWhitelist(frozenset(entries), top_n, malformed)


def load_ip_list(path) -> IpWhitelist:
    """Load a plain file of CIDR blocks and/or dotted-quad addresses."""
    with open(path, encoding="utf-8") as fh:
        return ip_whitelist_from_lines(fh)


def ip_whitelist_from_lines(lines: Iterable[str]) -> IpWhitelist:
    blocks, exact = set(), set()
    for line in lines:
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            if "/" in line:
                blocks.add(str(ipaddress.IPv4Network(line, strict=False)))
            else:
                exact.add(str(ipaddress.IPv4Address(line)))
        except ValueError:
            log.info("skipping malformed ip whitelist entry %r", line)
    return IpWhitelist(frozenset(blocks), frozenset(exact))


EMPTY_DOMAINS = DomainWhitelist()
EMPTY_IPS = IpWhitelist()


def is_whitelisted(ind: NetworkIndicator, dw: DomainWhitelist = EMPTY_DOMAINS,
                   iw: IpWhitelist = EMPTY_IPS) -> bool:
    if ind.kind is Kind.DOMAIN:
        return dw.matches(ind.value)
    return iw.matches(ind.value)


def filter_result(result: ExtractionResult, dw: DomainWhitelist = EMPTY_DOMAINS,
                  iw: IpWhitelist = EMPTY_IPS) -> ExtractionResult:
    """Drop whitelisted indicators, counting removals per reason."""
    kept = set()
    removed = Counter(result.whitelisted)
    for ind, src in result.indicators:
        if is_whitelisted(ind, dw, iw):
            removed["domain_whitelist" if ind.kind is Kind.DOMAIN else "ip_whitelist"] += 1
        else:
            kept.add((ind, src))
    return ExtractionResult(result.sample, frozenset(kept), result.dropped, dict(removed), result.family)

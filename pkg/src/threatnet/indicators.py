"""Extraction and validation of network indicators (IPv4 addresses, domains).

Reports come either as unstructured text (static analysis, e.g. a dex dump)
or as labelled fields (dynamic analysis, e.g. a sandbox JSON report). Both
paths share the same validator, so every emitted indicator is canonical:
dotted-quad for IPv4, lowercase ASCII FQDN without trailing dot for domains.
"""

from __future__ import annotations

import ipaddress
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Mapping, Sequence

log = logging.getLogger(__name__)

DEFAULT_DYNAMIC_FIELDS = ("dns_query", "dns_response", "tcp_connect", "udp_connect", "http_host")


class Kind(str, Enum):
    IPV4 = "ip"
    DOMAIN = "domain"


class Source(str, Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"


_HASH_RE = re.compile(r"[0-9a-f]{32}|[0-9a-f]{40}|[0-9a-f]{64}")


def sample_id(value: str) -> str:
    """Validate a sample hash (MD5, SHA1 or SHA256 hex) and return it lowercased."""
    canon = value.strip().lower()
    if not _HASH_RE.fullmatch(canon):
        raise ValueError(f"not a 32/40/64-char hex hash: {value!r}")
    return canon


# Blocks that are never reachable on the public Internet.
NON_ROUTABLE = tuple(
    ipaddress.IPv4Network(c)
    for c in (
        "0.0.0.0/8", "10.0.0.0/8", "100.64.0.0/10", "127.0.0.0/8",
        "169.254.0.0/16", "172.16.0.0/12", "192.0.0.0/24", "192.0.2.0/24",
        "192.168.0.0/16", "198.18.0.0/15", "198.51.100.0/24", "203.0.113.0/24",
        "224.0.0.0/4", "240.0.0.0/4", "255.255.255.255/32",
    )
)
_NON_ROUTABLE_RANGES = tuple(
    (int(n.network_address), int(n.broadcast_address)) for n in NON_ROUTABLE
)


def ip_to_int(ip: str) -> int:
    a, b, c, d = (int(p) for p in ip.split("."))
    return (a << 24) | (b << 16) | (c << 8) | d


def int_to_ip(value: int) -> str:
    return f"{value >> 24 & 255}.{value >> 16 & 255}.{value >> 8 & 255}.{value & 255}"


def is_routable(ip: str) -> bool:
    """Return False if ``ip`` lies in a private, reserved, documentation or multicast block."""
    v = ip_to_int(ip)
    return not any(lo <= v <= hi for lo, hi in _NON_ROUTABLE_RANGES)


def parse_ipv4(text: str) -> str | None:
    """Return the dotted-quad form of ``text`` or None if it is not four octets 0-255."""
    parts = text.split(".")
    if len(parts) != 4:
        return None
    octets = []
    for p in parts:
        if not (1 <= len(p) <= 3) or not p.isascii() or not p.isdigit():
            return None
        v = int(p)
        if v > 255:
            return None
        octets.append(v)
    return ".".join(map(str, octets))


_LABEL_RE = re.compile(r"[a-z0-9](?:[a-z0-9-]{0,61}[a-z0-9])?")
_TLD_RE = re.compile(r"[a-z]{1,63}|xn--[a-z0-9-]{1,59}")


_VALID_DOMAIN_RE = re.compile(
    r"(?:[a-z0-9](?:[a-z0-9-]{0,61}[a-z0-9])?\.)+(?:[a-z]{1,63}|xn--[a-z0-9-]{1,59})"
)


def domain_problem(name: str) -> str | None:
    """Return the rejection reason for a lowercase domain candidate, or None if valid."""
    if len(name) <= 253 and _VALID_DOMAIN_RE.fullmatch(name):
        return None
    if not name.isascii():
        return "non_ascii"
    if len(name) > 253:
        return "too_long"
    labels = name.split(".")
    if len(labels) < 2:
        return "invalid_domain"
    if not all(_LABEL_RE.fullmatch(lab) for lab in labels):
        return "invalid_domain"
    if not _TLD_RE.fullmatch(labels[-1]):
        return "invalid_domain"
    return None


def canonical_domain(name: str) -> str | None:
    name = name.strip().rstrip(".").lower()
    return name if domain_problem(name) is None else None


@dataclass(frozen=True, order=True)
class NetworkIndicator:
    """A validated, canonical IPv4 address or domain name."""

    kind: Kind
    value: str

    @classmethod
    def parse(cls, text: str) -> "NetworkIndicator":
        """Build an indicator from a bare token, raising ValueError when invalid."""
        ind, reason = classify_token(text)
        if ind is None:
            raise ValueError(f"{text!r}: {reason}")
        return ind

    @classmethod
    def ip(cls, value: str) -> "NetworkIndicator":
        return cls(Kind.IPV4, value)

    @classmethod
    def domain(cls, value: str) -> "NetworkIndicator":
        return cls(Kind.DOMAIN, value)

    def __str__(self) -> str:
        return self.value


def is_valid(ind: NetworkIndicator) -> bool:
    """Check every NetworkIndicator invariant on ``ind``."""
    if ind.kind is Kind.IPV4:
        return parse_ipv4(ind.value) == ind.value and is_routable(ind.value)
    return domain_problem(ind.value) is None and ind.value == ind.value.lower()


def _strip_port(host: str) -> str:
    if host.count(":") == 1:
        h, port = host.split(":")
        if port.isdigit() or port == "":
            return h
    return host


def classify_token(token: str) -> tuple[NetworkIndicator | None, str | None]:
    """Validate a single host-like token (bare host, ``host:port`` or URL).

    Returns ``(indicator, None)`` on success and ``(None, reason)`` otherwise.
    """
    tok = token.strip()
    if "://" in tok:
        tok = _url_host(tok)
    tok = _strip_port(tok).strip().rstrip(".").lower()
    if not tok:
        return None, "empty"
    if re.fullmatch(r"[0-9.]+", tok):
        ip = parse_ipv4(tok)
        if ip is None:
            return None, "invalid_ipv4"
        if not is_routable(ip):
            return None, "non_routable"
        return NetworkIndicator(Kind.IPV4, ip), None
    reason = domain_problem(tok)
    if reason is not None:
        return None, reason
    return NetworkIndicator(Kind.DOMAIN, tok), None


# Matching is done in three passes over the text: URLs are consumed first so
# that only their host survives, then IPv4 literals, then domain candidates.
_URL_RE = re.compile(r"(?<![\w])[A-Za-z][A-Za-z0-9+.-]{0,15}://[^\s<>\"'`]+")
_IPV4_RE = re.compile(r"(?<![0-9.])[0-9]{1,3}\.[0-9]{1,3}\.[0-9]{1,3}\.[0-9]{1,3}(?![0-9]|\.[0-9])")
# Deliberately broader than LDH (\w includes non-ASCII letters and "_") so that
# a non-ASCII domain is seen whole and rejected, not truncated to an ASCII tail.
_DOMAIN_CAND_RE = re.compile(r"(?<![\w-])(?:[\w-]+\.)+[\w-]+(?![\w-])")
_HOST_TRAIL = ".,;:!?)]}'\""


def _url_host(url: str) -> str:
    rest = url.split("://", 1)[1]
    netloc = re.split(r"[/?#\\]", rest, maxsplit=1)[0]
    netloc = netloc.rsplit("@", 1)[-1]
    netloc = netloc.rstrip(_HOST_TRAIL)
    return _strip_port(netloc)


def _looks_like_domain(cand: str) -> bool:
    last = cand.rsplit(".", 1)[-1]
    return last.isalpha() or last.lower().startswith("xn--")


@dataclass(frozen=True)
class AnalysisReport:
    """One static or dynamic analysis output for a sample.

    Exactly one of ``text`` (unstructured payload) and ``fields`` (structured
    payload, field name to list of values) is set.
    """

    sample: str
    source: Source
    text: str | None = None
    fields: Mapping[str, Sequence[str]] | None = None
    family: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "sample", sample_id(self.sample))
        object.__setattr__(self, "source", Source(self.source))
        if (self.text is None) == (self.fields is None):
            raise ValueError("report needs exactly one of text or fields")
        if self.text is not None and not self.text:
            raise ValueError("report payload is empty")
        if self.fields is not None and not self.fields:
            raise ValueError("report payload is empty")

    @property
    def structured(self) -> bool:
        return self.fields is not None


@dataclass(frozen=True)
class ExtractionResult:
    sample: str
    indicators: frozenset = frozenset()  # of (NetworkIndicator, Source)
    dropped: Mapping[str, int] = field(default_factory=dict)
    whitelisted: Mapping[str, int] = field(default_factory=dict)
    family: str | None = None

    def values(self) -> set[NetworkIndicator]:
        return {ind for ind, _ in self.indicators}

    def sources_of(self, ind: NetworkIndicator) -> set[Source]:
        return {s for i, s in self.indicators if i == ind}

    @property
    def n_dropped(self) -> int:
        return sum(self.dropped.values())

    def to_json(self) -> dict:
        return {
            "sample": self.sample,
            "family": self.family,
            "indicators": [
                {"kind": i.kind.value, "value": i.value, "source": s.value}
                for i, s in sorted(self.indicators, key=lambda p: (p[0].kind.value, p[0].value, p[1].value))
            ],
            "dropped": dict(sorted(self.dropped.items())),
            "whitelisted": dict(sorted(self.whitelisted.items())),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "ExtractionResult":
        inds = frozenset(
            (NetworkIndicator(Kind(d["kind"]), d["value"]), Source(d["source"]))
            for d in obj["indicators"]
        )
        return cls(obj["sample"], inds, dict(obj.get("dropped", {})),
                   dict(obj.get("whitelisted", {})), obj.get("family"))


def extract_from_text(text: str | bytes, sample: str, source: Source | str) -> ExtractionResult:
    """Pull every IPv4 literal, domain name and URL host out of free text."""
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    source = Source(source)
    sample = sample_id(sample)
    found: set = set()
    dropped: Counter = Counter()

    def keep(ind, reason):
        if ind is None:
            dropped[reason] += 1
        else:
            found.add((ind, source))

    buf = list(text)

    def mask(m):
        buf[m.start():m.end()] = " " * (m.end() - m.start())

    for m in _URL_RE.finditer(text):
        keep(*classify_token(m.group()))
        mask(m)
    masked = "".join(buf)
    for m in _IPV4_RE.finditer(masked):
        keep(*classify_token(m.group()))
        mask(m)
    masked = "".join(buf)
    for m in _DOMAIN_CAND_RE.finditer(masked):
        cand = m.group()
        if not _looks_like_domain(cand):
            continue
        reason = domain_problem(cand.lower())
        keep(None if reason else NetworkIndicator(Kind.DOMAIN, cand.lower()), reason)
    return ExtractionResult(sample, frozenset(found), dict(dropped))


def extract_from_structured(report: AnalysisReport,
                            fields: Iterable[str] = DEFAULT_DYNAMIC_FIELDS) -> ExtractionResult:
    """Read indicators from the allow-listed network fields of a structured report."""
    if not report.structured:
        raise ValueError("report payload is not structured")
    allowed = set(fields)
    found: set = set()
    dropped: Counter = Counter()
    for name, values in report.fields.items():
        if name not in allowed:
            log.debug("ignoring field %r of %s", name, report.sample)
            continue
        if isinstance(values, str):
            values = [values]
        for v in values:
            ind, reason = classify_token(str(v))
            if ind is None:
                dropped[reason] += 1
            else:
                found.add((ind, report.source))
    return ExtractionResult(report.sample, frozenset(found), dict(dropped), family=report.family)


def extract(report: AnalysisReport, fields: Iterable[str] = DEFAULT_DYNAMIC_FIELDS) -> ExtractionResult:
    if report.structured:
        return extract_from_structured(report, fields)
    res = extract_from_text(report.text, report.sample, report.source)
    return ExtractionResult(res.sample, res.indicators, res.dropped, family=report.family)


def _merge_counts(*counts: Mapping[str, int]) -> dict:
    total: Counter = Counter()
    for c in counts:
        total.update(c)
    return dict(total)


def combine(results: Iterable[ExtractionResult], mode: str = "union") -> list[ExtractionResult]:
    """Merge per-report results into one result per sample, sorted by sample hash.

    ``mode="intersection"`` keeps only indicators seen by both the static and
    the dynamic analysis of a sample; samples analysed one way only are kept
    unchanged.
    """
    if mode not in ("union", "intersection"):
        raise ValueError(f"unknown combine mode {mode!r}")
    by_sample: dict[str, list[ExtractionResult]] = {}
    for r in results:
        by_sample.setdefault(r.sample, []).append(r)
    out = []
    for sample in sorted(by_sample):
        group = by_sample[sample]
        pairs = frozenset().union(*(r.indicators for r in group))
        if mode == "intersection":
            by_src: dict = {}
            for ind, src in pairs:
                by_src.setdefault(src, set()).add(ind)
            if len(by_src) == 2:
                both = by_src[Source.STATIC] & by_src[Source.DYNAMIC]
                pairs = frozenset(p for p in pairs if p[0] in both)
        family = next((r.family for r in group if r.family), None)
        out.append(ExtractionResult(
            sample, pairs,
            _merge_counts(*(r.dropped for r in group)),
            _merge_counts(*(r.whitelisted for r in group)),
            family,
        ))
    return out


def report_from_json(obj: Mapping) -> AnalysisReport:
    return AnalysisReport(
        sample=obj["sample"],
        source=obj["source"],
        text=obj.get("text"),
        fields=obj.get("fields"),
        family=obj.get("family"),
    )


def read_reports(path) -> Iterator[AnalysisReport]:
    """Yield reports from a JSON-lines container, skipping blank lines."""
    with open(path, encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield report_from_json(json.loads(line))
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: bad report: {exc}") from exc

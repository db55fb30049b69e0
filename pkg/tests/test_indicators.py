import json
import random

import pytest
from hypothesis import given, settings, strategies as st

import oracles
from threatnet.indicators import (
    AnalysisReport, ExtractionResult, Kind, NetworkIndicator, Source, canonical_domain,
    classify_token, combine, extract, extract_from_structured, extract_from_text, is_routable,
    is_valid, parse_ipv4, read_reports, sample_id,
)

S = oracles.md5("sample")


def values(result):
    return {(i.kind.value, i.value) for i, _ in result.indicators}


# ----------------------------------------------------------------- examples


def test_single_ip_literal():
    r = extract_from_text("connect to 8.8.8.8 now", S, "static")
    assert values(r) == {("ip", "8.8.8.8")}


def test_url_keeps_lowercased_host_only():
    r = extract_from_text("http://Evil.Example.COM/path?q=1", S, "static")
    assert values(r) == {("domain", "evil.example.com")}


def test_out_of_range_octets_are_dropped():
    r = extract_from_text("octets 999.1.1.1 and 10.0.0.300", S, "static")
    assert values(r) == set()
    assert r.n_dropped == 2


def test_version_strings_are_not_domains():
    r = extract_from_text('const-string v0, "1.2.3" build 4.5', S, "static")
    assert values(r) == set()


def test_non_ascii_domain_rejected_whole():
    r = extract_from_text("visit пример.испытание.com today", S, "static")
    assert values(r) == set()
    assert r.dropped == {"non_ascii": 1}


def test_punycode_accepted():
    r = extract_from_text("go to xn--e1afmkfd.xn--p1ai", S, "static")
    assert values(r) == {("domain", "xn--e1afmkfd.xn--p1ai")}


def test_bytes_input_with_invalid_utf8():
    r = extract_from_text(b"\xff\xfe host c2.bad.ru \x80", S, "static")
    assert values(r) == {("domain", "c2.bad.ru")}


@pytest.mark.parametrize("ip,expected", [
    ("10.1.2.3", False), ("203.0.113.9", False), ("93.184.216.34", True),
    ("100.64.0.1", False), ("172.31.255.255", False), ("172.32.0.1", True),
    ("198.19.255.255", False), ("224.0.0.1", False), ("255.255.255.255", False),
    ("0.1.2.3", False), ("1.1.1.1", True),
])
def test_is_routable(ip, expected):
    assert is_routable(ip) is expected


def test_structured_fields():
    rep = AnalysisReport(S, "dynamic", fields={"dns_query": ["ads.tracker.net"]})
    assert values(extract_from_structured(rep)) == {("domain", "ads.tracker.net")}


def test_structured_port_is_stripped():
    rep = AnalysisReport(S, "dynamic", fields={"tcp_connect": ["93.184.216.34:443"]})
    assert values(extract_from_structured(rep)) == {("ip", "93.184.216.34")}


def test_structured_documentation_address_is_non_routable():
    # stripping the port leaves a TEST-NET-3 address, which is never an indicator
    rep = AnalysisReport(S, "dynamic", fields={"tcp_connect": ["203.0.113.7:443"]})
    r = extract_from_structured(rep)
    assert values(r) == set()
    assert r.dropped == {"non_routable": 1}


def test_structured_five_planted_hosts():
    planted = {("domain", "c2.alpha.net"), ("domain", "cdn.beta-drop.io"), ("ip", "91.200.12.7"),
               ("ip", "185.44.9.20"), ("domain", "pay.gamma.biz")}
    rep = AnalysisReport(S, "dynamic", fields={
        "dns_query": ["c2.alpha.net", "CDN.Beta-Drop.io."],
        "tcp_connect": ["91.200.12.7:8080", "192.168.0.10:53"],
        "udp_connect": ["185.44.9.20"],
        "http_host": ["pay.gamma.biz:80", "c2.alpha.net"],
        "file_write": ["/sdcard/evil.apk", "ignored.example.com"],
        "dns_response": ["not a host!"],
    })
    r = extract_from_structured(rep)
    assert values(r) == planted
    assert r.dropped == {"non_routable": 1, "invalid_domain": 1}


def test_sample_id_validation():
    assert sample_id(S.upper()) == S
    with pytest.raises(ValueError):
        sample_id("xyz")
    with pytest.raises(ValueError):
        sample_id("a" * 33)


def test_report_needs_exactly_one_payload():
    with pytest.raises(ValueError):
        AnalysisReport(S, "static")
    with pytest.raises(ValueError):
        AnalysisReport(S, "static", text="")
    with pytest.raises(ValueError):
        AnalysisReport(S, "static", text="x", fields={"a": []})


def test_parse_indicator():
    assert NetworkIndicator.parse("https://A.B.com:8443/x") == NetworkIndicator.domain("a.b.com")
    with pytest.raises(ValueError):
        NetworkIndicator.parse("10.0.0.1")


def test_combine_union_and_intersection():
    d = AnalysisReport(S, "dynamic", fields={"dns_query": ["a.com", "b.com"]}, family="Fam")
    s = AnalysisReport(S, "static", text="b.com c.com")
    only = AnalysisReport(oracles.md5("other"), "static", text="z.com")
    rs = [extract(d), extract(s), extract(only)]
    u = {r.sample: r for r in combine(rs)}
    assert {i.value for i in u[S].values()} == {"a.com", "b.com", "c.com"}
    assert u[S].family == "Fam"
    assert u[S].sources_of(NetworkIndicator.domain("b.com")) == {Source.STATIC, Source.DYNAMIC}
    x = {r.sample: r for r in combine(rs, "intersection")}
    assert {i.value for i in x[S].values()} == {"b.com"}
    assert {i.value for i in x[only.sample].values()} == {"z.com"}
    with pytest.raises(ValueError):
        combine(rs, "xor")


def test_result_json_round_trip():
    r = extract_from_text("c2.bad.ru 8.8.8.8 10.0.0.1", S, "dynamic")
    again = ExtractionResult.from_json(json.loads(json.dumps(r.to_json())))
    assert again == r


def test_read_reports(tmp_path):
    p = tmp_path / "r.jsonl"
    p.write_text(json.dumps({"sample": S, "source": "static", "text": "x.com"}) + "\n\n"
                 + json.dumps({"sample": S, "source": "dynamic", "fields": {"dns_query": ["y.com"]}}) + "\n")
    reps = list(read_reports(p))
    assert [r.structured for r in reps] == [False, True]


# ------------------------------------------------------------ planted corpus


@pytest.mark.parametrize("seed", range(5))
def test_planted_corpus_recall_and_precision(seed):
    text, manifest = oracles.planted_corpus(seed)
    assert len(text.splitlines()) == 1000
    assert sum(k == "ip" for k, _ in manifest) == 40
    got = values(extract_from_text(text, S, "static"))
    assert got == manifest


def test_extraction_is_deterministic():
    text, _ = oracles.planted_corpus(11)
    assert extract_from_text(text, S, "static") == extract_from_text(text, S, "static")


# ------------------------------------------------------------------- properties


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=400))
def test_fuzz_every_emitted_indicator_is_valid(data):
    r = extract_from_text(data, S, "static")
    for ind, _ in r.indicators:
        assert is_valid(ind)
        assert ind.value.isascii()


@settings(max_examples=300, deadline=None)
@given(st.text(alphabet="abc.-019:/ \n", max_size=80))
def test_fuzz_dense_alphabet(text):
    for ind, _ in extract_from_text(text, S, "static").indicators:
        assert is_valid(ind)


_alnum = "abcdefghijklmnopqrstuvwxyz0123456789"
_label = st.builds(lambda a, mid, b: a + mid + b if mid or b else a,
                   st.sampled_from(_alnum), st.text(alphabet=_alnum + "-", max_size=8),
                   st.sampled_from(["", *_alnum]))
_label = _label.filter(lambda x: not x.endswith("-"))
_tld = st.text(alphabet="abcdefghijklmnopqrstuvwxyz", min_size=2, max_size=6)
domains = st.builds(lambda ls, t: ".".join(ls + [t]), st.lists(_label, min_size=1, max_size=3), _tld)


@settings(max_examples=200, deadline=None)
@given(domains, st.sampled_from(["", ".", ":80", "/index.html"]), st.booleans())
def test_canonicalisation_idempotent(dom, suffix, upper):
    shown = (dom.upper() if upper else dom) + suffix
    if suffix == "/index.html":
        shown = "http://" + shown
    canon = canonical_domain(dom)
    r = extract_from_text(shown, S, "static")
    assert values(r) == {("domain", canon)}
    assert values(extract_from_text(canon, S, "static")) == {("domain", canon)}


ips = st.builds(lambda a: oracles.routable_ip(random.Random(a)), st.integers(0, 10**9))


@settings(max_examples=200, deadline=None)
@given(ips)
def test_ip_round_trip(ip):
    assert parse_ipv4(ip) == ip
    ind, reason = classify_token(ip)
    assert reason is None and ind.kind is Kind.IPV4


_octets = st.lists(st.integers(0, 999).map(str), min_size=2, max_size=5).map(".".join)
tokens = st.one_of(domains, ips, st.text(alphabet="abcxyz", min_size=1, max_size=8), _octets)


@settings(max_examples=200, deadline=None)
@given(st.lists(tokens, max_size=8), st.lists(tokens, max_size=8))
def test_union_property(a, b):
    ta, tb = " ".join(a), " ".join(b)
    both = values(extract_from_text(ta + " " + tb, S, "static"))
    assert both >= values(extract_from_text(ta, S, "static")) | values(extract_from_text(tb, S, "static"))

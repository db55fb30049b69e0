"""Stage orchestration: extract, filter, enrich, build, analyze, rank, tag.

Every stage reads the artifacts persisted by the previous one from
``<out>/<epoch>/`` and writes its own, so any stage can be rerun in
isolation and produce byte-identical downstream files. Files are written
with a ``.partial`` suffix and renamed once the whole stage succeeds.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import __version__
from .community import LouvainParams, Partition, detect
from .errors import ConfigError, StageError
from .export import dumps, network_from_json, network_to_json, to_dot, to_graphml
from .graph import Flavor, RandomGraphSpec, ThreatNetwork, build_hetero, gen_random, project, prune_weak
from .indicators import ExtractionResult, combine, extract, read_reports
from .pdns import PdnsStore, enrich, staleness_window
from .ranking import PageRankParams, community_priority_lists, pagerank, priority_csv, priority_list
from .tagging import family_table_csv, load_feeds, tag
from .whitelist import EMPTY_DOMAINS, EMPTY_IPS, filter_result, load_domain_list, load_ip_list

log = logging.getLogger(__name__)

STAGES = ("extract", "filter", "enrich", "build", "analyze", "rank", "tag")

DEFAULTS = {
    "input": {"reports": None},
    "output": {"dir": "out"},
    "epoch": "default",
    "flavor": "all",
    "workers": 1,
    "extract": {
        "dynamic_fields": ["dns_query", "dns_response", "tcp_connect", "udp_connect", "http_host"],
        "combine": "union",
    },
    "whitelist": {"domains_path": None, "domains_format": "ranked", "top_n": None, "ip_path": None},
    "pdns": {"enabled": True, "path": None, "rounds": 1, "staleness_days": None, "now": None},
    "prune": {"min_degree": 1, "min_component": 3},
    "community": {"resolution": 1.0, "min_gain": 1e-7, "max_passes": 32, "seed": None},
    "rank": {"damping": 0.85, "epsilon": 0.001, "max_iters": 100},
    "tag": {
        "enabled": True, "pc_malware_path": None, "spam_path": None,
        "phishing_path": None, "probing_path": None, "suffix_match": False, "top_k": 10,
    },
}

PATH_KEYS = (
    "input.reports", "whitelist.domains_path", "whitelist.ip_path", "pdns.path",
    "tag.pc_malware_path", "tag.spam_path", "tag.phishing_path", "tag.probing_path",
)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _coerce(text: str):
    try:
        return json.loads(text)
    except ValueError:
        return text


@dataclass
class PipelineConfig:
    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "PipelineConfig":
        """Defaults, then the JSON file at ``path``, then dot-path ``overrides``.

        Relative paths in the file resolve against the file's directory.
        """
        data = copy.deepcopy(DEFAULTS)
        base = Path.cwd()
        if path is not None:
            path = Path(path)
            try:
                data = _merge(data, json.loads(path.read_text()))
            except (OSError, ValueError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            base = path.resolve().parent
        cfg = cls(data, base)
        for key, value in (overrides or {}).items():
            cfg.set(key, _coerce(value) if isinstance(value, str) else value)
        return cfg

    def get(self, key: str, default=None):
        node = self.data
        for part in key.split("."):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    def set(self, key: str, value):
        parts = key.split(".")
        node = self.data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot set {key}: {part} is not a section")
        node[parts[-1]] = value

    def path(self, key: str) -> Path | None:
        value = self.get(key)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def flavors(self) -> list[Flavor]:
        f = self.get("flavor")
        if f == "all":
            return [Flavor.IP, Flavor.DOMAIN, Flavor.COMBINED]
        try:
            return [Flavor(f)]
        except ValueError:
            raise ConfigError(f"flavor must be ip, domain, combined or all, not {f!r}") from None

    @property
    def workers(self) -> int:
        env = os.environ.get("THREATNET_WORKERS")
        n = int(env) if env else int(self.get("workers", 1))
        return max(1, n)

    def out_dir(self) -> Path:
        out = self.get("output.dir")
        p = Path(out) if Path(out).is_absolute() else Path.cwd() / out
        return p / str(self.get("epoch"))

    def validate(self, stages: Iterable[str] = STAGES):
        _ = self.flavors
        stages = set(stages)
        if "extract" in stages and self.get("input.reports") is None:
            raise ConfigError("input.reports is required")
        if self.get("extract.combine") not in ("union", "intersection"):
            raise ConfigError("extract.combine must be union or intersection")
        for key in PATH_KEYS:
            p = self.path(key)
            if p is not None and not p.exists():
                raise ConfigError(f"{key}: {p} does not exist")

        try:
            louvain_params(self)
            rank_params(self)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def snapshot(self) -> dict:
        return copy.deepcopy(self.data)


def louvain_params(cfg: PipelineConfig) -> LouvainParams:
    return LouvainParams(
        resolution=float(cfg.get("community.resolution")),
        min_gain=float(cfg.get("community.min_gain")),
        max_passes=int(cfg.get("community.max_passes")),
        seed=cfg.get("community.seed"),
    )


def rank_params(cfg: PipelineConfig) -> PageRankParams:
    return PageRankParams(float(cfg.get("rank.damping")), float(cfg.get("rank.epsilon")),
                          int(cfg.get("rank.max_iters")))


@dataclass
class RunManifest:
    config: dict
    version: str = __version__
    epoch: str = "default"
    timings: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    python: str = platform.python_version()

    def to_json(self) -> dict:
        return {
            "version": self.version, "python": self.python, "epoch": self.epoch,
            "seeds": self.seeds, "timings": self.timings, "counts": self.counts,
            "config": self.config,
        }


class _Outputs:
    """Collects a stage's files as ``.partial`` and publishes them on success."""

    def __init__(self, root: Path):
        self.root = root
        self.pending: list[Path] = []

    def write(self, name: str, text: str):
        self.root.mkdir(parents=True, exist_ok=True)
        target = self.root / name
        tmp = target.with_name(target.name + ".partial")
        tmp.write_text(text, encoding="utf-8")
        self.pending.append(target)

    def commit(self):
        for target in self.pending:
            os.replace(target.with_name(target.name + ".partial"), target)
        self.pending.clear()


def _read_jsonl(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _jsonl(objs) -> str:
    return "".join(json.dumps(o, sort_keys=False) + "\n" for o in objs)


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise ConfigError(f"stage {stage} needs {path.name}; run the previous stage first")
    return path


def _extract_one(args):
    report, fields = args
    return extract(report, fields)


# ------------------------------------------------------------------- stages


def stage_extract(cfg: PipelineConfig, out: _Outputs) -> dict:
    reports = list(read_reports(cfg.path("input.reports")))
    fields = tuple(cfg.get("extract.dynamic_fields"))
    jobs = [(r, fields) for r in reports]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_extract_one, jobs, chunksize=max(1, len(jobs) // (4 * cfg.workers))))
    else:
        results = [_extract_one(j) for j in jobs]
    merged = combine(results, cfg.get("extract.combine"))
    out.write("extracted.jsonl", _jsonl(r.to_json() for r in merged))
    return {"reports": len(reports), "samples": len(merged),
            "indicators": sum(len(r.values()) for r in merged),
            "dropped": sum(r.n_dropped for r in merged)}


def _whitelists(cfg: PipelineConfig):
    p = cfg.path("whitelist.domains_path")
    dw = EMPTY_DOMAINS if p is None else load_domain_list(
        p, cfg.get("whitelist.domains_format"), cfg.get("whitelist.top_n"))
    p = cfg.path("whitelist.ip_path")
    iw = EMPTY_IPS if p is None else load_ip_list(p)
    return dw, iw


def stage_filter(cfg: PipelineConfig, out: _Outputs) -> dict:
    rows = _read_jsonl(_require(out.root / "extracted.jsonl", "filter"))
    dw, iw = _whitelists(cfg)
    filtered = [filter_result(ExtractionResult.from_json(r), dw, iw) for r in rows]
    out.write("filtered.jsonl", _jsonl(r.to_json() for r in filtered))
    return {"indicators": sum(len(r.values()) for r in filtered),
            "whitelisted": sum(sum(r.whitelisted.values()) for r in filtered)}


def stage_enrich(cfg: PipelineConfig, out: _Outputs) -> dict:
    rows = _read_jsonl(_require(out.root / "filtered.jsonl", "enrich"))
    results = [ExtractionResult.from_json(r) for r in rows]
    inputs = set().union(*(r.values() for r in results)) if results else set()
    enabled = bool(cfg.get("pdns.enabled")) and cfg.path("pdns.path") is not None
    added, edges, window = set(), set(), None
    if enabled:
        store = PdnsStore.from_jsonl(cfg.path("pdns.path"))
        window = staleness_window(store, cfg.get("pdns.staleness_days"), cfg.get("pdns.now"))
        dw, iw = _whitelists(cfg)
        enriched, edges = enrich(inputs, store, window, dw, iw, int(cfg.get("pdns.rounds")))
        added = enriched - inputs
    doc = {
        "enabled": enabled,
        "window": list(window) if window else None,
        "added": [{"kind": i.kind.value, "value": i.value} for i in sorted(added)],
        "resolution_edges": [list(e) for e in sorted(edges)],
    }
    out.write("enriched.json", dumps(doc))
    return {"enabled": enabled, "added": len(added), "resolution_edges": len(edges)}


def _flavor_map(cfg, fn):
    flavors = cfg.flavors
    if len(flavors) > 1 and cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=min(cfg.workers, len(flavors))) as pool:
            return dict(zip(flavors, pool.map(fn, flavors)))
    return {f: fn(f) for f in flavors}


def stage_build(cfg: PipelineConfig, out: _Outputs) -> dict:
    rows = _read_jsonl(_require(out.root / "filtered.jsonl", "build"))
    results = [ExtractionResult.from_json(r) for r in rows]
    enriched = out.root / "enriched.json"
    edges = []
    if enriched.exists():
        edges = [tuple(e) for e in json.loads(enriched.read_text())["resolution_edges"]]
    g = build_hetero(results, edges)
    out.write("hetero.json", dumps(g.to_json()))

    def one(flavor):
        tn = project(g, flavor)
        pruned = prune_weak(tn, cfg.get("prune.min_degree"), cfg.get("prune.min_component"))
        return tn, pruned

    counts = {"samples": len(g.samples), "indicators": len(g.indicators),
              "observed": len(g.observed), "resolution": len(g.resolution)}
    for flavor, (tn, pruned) in _flavor_map(cfg, one).items():
        f = flavor.value
        out.write(f"network_{f}.json", dumps(network_to_json(pruned)))
        out.write(f"network_{f}.dot", to_dot(pruned, f"threat_network_{f}"))
        out.write(f"network_{f}.graphml", to_graphml(pruned))
        counts[f] = {"projected_nodes": tn.n, "projected_edges": tn.m,
                     "nodes": pruned.n, "edges": pruned.m}
    return counts


def _load_network(out: _Outputs, flavor: Flavor, stage: str) -> ThreatNetwork:
    path = _require(out.root / f"network_{flavor.value}.json", stage)
    return network_from_json(json.loads(path.read_text()))


def _partition(tn: ThreatNetwork, params: LouvainParams) -> Partition:
    if tn.total_weight > 0:
        return detect(tn, params)
    # nothing to cluster: every node is its own community
    return Partition(np.arange(tn.n, dtype=np.int64), None, params.resolution)


def stage_analyze(cfg: PipelineConfig, out: _Outputs) -> dict:
    params = louvain_params(cfg)

    def one(flavor):
        tn = _load_network(out, flavor, "analyze")
        return _partition(tn, params).to_json(tn)

    counts = {}
    for flavor, doc in _flavor_map(cfg, one).items():
        out.write(f"partition_{flavor.value}.json", dumps(doc))
        counts[flavor.value] = {"communities": len(doc["communities"]),
                                "modularity": doc["modularity"]}
    return counts


def _load_partition(out: _Outputs, tn: ThreatNetwork, flavor: Flavor, stage: str) -> Partition:
    path = _require(out.root / f"partition_{flavor.value}.json", stage)
    return Partition.from_json(json.loads(path.read_text()), tn)


def stage_rank(cfg: PipelineConfig, out: _Outputs) -> dict:
    params = rank_params(cfg)

    def one(flavor):
        tn = _load_network(out, flavor, "rank")
        files = {}
        if tn.n == 0:
            files[f"priority_{flavor.value}.csv"] = priority_csv([])
            return files, 0
        part = _load_partition(out, tn, flavor, "rank")
        pl = priority_list(tn, pagerank(tn, params), part)
        files[f"priority_{flavor.value}.csv"] = pl.to_csv()
        for kind, entries in pl.by_kind.items():
            files[f"priority_{flavor.value}_{kind.value}.csv"] = pl.to_csv(entries)
        per_comm = community_priority_lists(tn, part, params)
        files[f"priority_{flavor.value}_communities.csv"] = priority_csv(
            [sub.entries for sub in per_comm])
        return files, len(pl)

    counts = {}
    for flavor, (files, n) in _flavor_map(cfg, one).items():
        for name, text in files.items():
            out.write(name, text)
        counts[flavor.value] = n
    return counts


def stage_tag(cfg: PipelineConfig, out: _Outputs) -> dict:
    if not cfg.get("tag.enabled"):
        return {"enabled": False}
    feeds = load_feeds(cfg.path("tag.pc_malware_path"), cfg.path("tag.spam_path"),
                       cfg.path("tag.phishing_path"), cfg.path("tag.probing_path"))
    k = int(cfg.get("tag.top_k"))

    def one(flavor):
        tn = _load_network(out, flavor, "tag")
        part = _load_partition(out, tn, flavor, "tag") if tn.n else None
        return tag(tn, part, feeds, bool(cfg.get("tag.suffix_match")))

    counts = {"enabled": True, "feeds": dict(feeds.counts)}
    for flavor, report in _flavor_map(cfg, one).items():
        out.write(f"tags_{flavor.value}.json", dumps(report.to_json(k)))
        out.write(f"families_{flavor.value}.csv", family_table_csv(report, k))
        counts[flavor.value] = report.overall.total_events
    return counts


STAGE_FUNCS = {
    "extract": stage_extract, "filter": stage_filter, "enrich": stage_enrich,
    "build": stage_build, "analyze": stage_analyze, "rank": stage_rank, "tag": stage_tag,
}


def run_stage(cfg: PipelineConfig, stage: str, manifest: RunManifest | None = None) -> dict:
    """Run one stage against ``cfg.out_dir()``; errors are wrapped in StageError."""
    out = _Outputs(cfg.out_dir())
    t0 = time.perf_counter()
    try:
        counts = STAGE_FUNCS[stage](cfg, out)
    except (StageError, ConfigError):
        raise
    except Exception as exc:
        raise StageError(stage, exc) from exc
    out.commit()
    if manifest is not None:
        manifest.timings[stage] = round(time.perf_counter() - t0, 6)
        manifest.counts[stage] = counts
    return counts


def run(cfg: PipelineConfig, stages: Iterable[str] = STAGES) -> RunManifest:
    """Execute ``stages`` in order and write ``manifest.json`` next to the outputs."""
    stages = list(stages)
    cfg.validate(stages)
    manifest = RunManifest(cfg.snapshot(), epoch=str(cfg.get("epoch")),
                           seeds={"community": cfg.get("community.seed")})
    for stage in stages:
        log.info("stage %s", stage)
        run_stage(cfg, stage, manifest)
    out = _Outputs(cfg.out_dir())
    out.write("manifest.json", dumps(manifest.to_json()))
    out.commit()
    return manifest


# -------------------------------------------------------------------- bench


def bench(specs: Iterable[RandomGraphSpec], algorithms: Iterable[str] = ("detect", "pagerank"),
          louvain: LouvainParams = LouvainParams(),
          pagerank_params: PageRankParams = PageRankParams()) -> list[dict]:
    """Time community detection and/or PageRank on generated G(n, p) graphs."""
    algorithms = list(algorithms)
    for a in algorithms:
        if a not in ("detect", "pagerank"):
            raise ValueError(f"unknown algorithm {a!r}")
    rows = []
    for spec in specs:
        tn = gen_random(spec)
        for a in algorithms:
            t0 = time.perf_counter()
            if a == "detect":
                if tn.total_weight > 0:
                    detect(tn, louvain)
            else:
                pagerank(tn, pagerank_params)
            rows.append({"n": spec.n, "p": spec.p, "seed": spec.seed, "algorithm": a,
                         "seconds": time.perf_counter() - t0, "edges": tn.m})
    return rows


def bench_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "p", "seed", "algorithm", "seconds"])
    for r in rows:
        w.writerow([r["n"], repr(r["p"]), r["seed"], r["algorithm"], f"{r['seconds']:.6f}"])
    return buf.getvalue()

"""Heterogeneous sample/indicator graphs and their homogeneous projections.

A :class:`HeteroGraph` links sample hashes to the indicators their analyses
produced (``observed`` edges) and domains to the addresses they resolved to
(``resolution`` edges). Projecting it onto one node type gives a
:class:`ThreatNetwork`: a weighted, undirected graph over indicators in which
two indicators are adjacent when some sample contacted both.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import CapacityError, EmptyGraph
from .indicators import ExtractionResult, Kind, NetworkIndicator, int_to_ip

# Upper bound on generated edges; beyond this a random graph will not fit in
# the edge arrays plus the CSR copy on a desk machine.
MAX_RANDOM_EDGES = 50_000_000
_SYNTHETIC_BASE = 0x01000000  # 1.0.0.0


class NodeKind(str, Enum):
    SAMPLE = "sample"
    IP = "ip"
    DOMAIN = "domain"


class Flavor(str, Enum):
    IP = "ip"
    DOMAIN = "domain"
    COMBINED = "combined"

    @property
    def kinds(self) -> frozenset:
        if self is Flavor.IP:
            return frozenset({NodeKind.IP})
        if self is Flavor.DOMAIN:
            return frozenset({NodeKind.DOMAIN})
        return frozenset({NodeKind.IP, NodeKind.DOMAIN})


@dataclass(frozen=True, order=True)
class NodeId:
    kind: NodeKind
    key: str

    @classmethod
    def of(cls, ind: NetworkIndicator) -> "NodeId":
        return cls(NodeKind.IP if ind.kind is Kind.IPV4 else NodeKind.DOMAIN, ind.value)

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.key}"


# ---------------------------------------------------------------- hetero graph


@dataclass
class HeteroGraph:
    samples: dict = field(default_factory=dict)      # sample hash -> family or None
    indicators: dict = field(default_factory=dict)   # NodeId -> frozenset of source flags
    observed: set = field(default_factory=set)       # (sample hash, NodeId)
    resolution: set = field(default_factory=set)     # (domain NodeId, ip NodeId)

    @property
    def nodes(self) -> list[NodeId]:
        out = [NodeId(NodeKind.SAMPLE, s) for s in sorted(self.samples)]
        return out + sorted(self.indicators)

    def edges(self) -> list[tuple[NodeId, NodeId, str]]:
        obs = sorted((NodeId(NodeKind.SAMPLE, s), n, "observed") for s, n in self.observed)
        res = sorted((d, i, "resolution") for d, i in self.resolution)
        return obs + res

    def degree(self, node: NodeId) -> int:
        if node.kind is NodeKind.SAMPLE:
            return sum(1 for s, _ in self.observed if s == node.key)
        return (sum(1 for _, n in self.observed if n == node)
                + sum(1 for d, i in self.resolution if node in (d, i)))

    def neighbors_of_sample(self) -> dict[str, list[NodeId]]:
        out: dict[str, list[NodeId]] = {s: [] for s in self.samples}
        for s, n in self.observed:
            out[s].append(n)
        for s in out:
            out[s].sort()
        return out

    def to_json(self) -> dict:
        nodes = self.nodes
        ids = {n: i for i, n in enumerate(nodes)}
        jn = []
        for i, n in enumerate(nodes):
            d = {"id": i, "kind": n.kind.value, "key": n.key}
            if n.kind is NodeKind.SAMPLE:
                if self.samples[n.key]:
                    d["family"] = self.samples[n.key]
            else:
                d["sources"] = sorted(self.indicators[n])
            jn.append(d)
        je = [{"a": ids[a], "b": ids[b], "kind": k} for a, b, k in self.edges()]
        return {"nodes": jn, "edges": je}

    @classmethod
    def from_json(cls, obj: dict) -> "HeteroGraph":
        g = cls()
        nodes = {}
        for d in obj["nodes"]:
            n = NodeId(NodeKind(d["kind"]), d["key"])
            nodes[d["id"]] = n
            if n.kind is NodeKind.SAMPLE:
                g.samples[n.key] = d.get("family")
            else:
                g.indicators[n] = frozenset(d.get("sources", ()))
        for e in obj["edges"]:
            a, b = nodes[e["a"]], nodes[e["b"]]
            if e["kind"] == "observed":
                g.observed.add((a.key, b))
            else:
                g.resolution.add((a, b))
        return g


def build_hetero(results: Iterable[ExtractionResult],
                 resolution_edges: Iterable[tuple[str, str]] = ()) -> HeteroGraph:
    """Aggregate per-sample indicator sets and DNS resolutions into one graph."""
    g = HeteroGraph()
    flags: dict[NodeId, set] = {}
    for r in results:
        if r.sample not in g.samples or g.samples[r.sample] is None:
            g.samples[r.sample] = r.family
        for ind, src in r.indicators:
            n = NodeId.of(ind)
            flags.setdefault(n, set()).add(src.value)
            g.observed.add((r.sample, n))
    for dom, ip in resolution_edges:
        d, i = NodeId(NodeKind.DOMAIN, dom), NodeId(NodeKind.IP, ip)
        for n in (d, i):
            if n not in flags:
                flags[n] = {"pdns"}
        g.resolution.add((d, i))
    g.indicators = {n: frozenset(f) for n, f in flags.items()}
    if not g.indicators:
        raise EmptyGraph("no indicators to build a threat network from")
    return g


# ------------------------------------------------------------- threat network


class ThreatNetwork:
    """Weighted undirected indicator graph with dense integer node ids.

    Edges are stored once with ``src < dst``, sorted; ``samples[e]`` and
    ``links[e]`` hold the evidence for edge ``e`` (contributing sample hashes
    and DNS-resolution witnesses respectively). Randomly generated networks
    carry no evidence (both are None).
    """

    def __init__(self, flavor: Flavor, nodes: Sequence[NodeId], src, dst, weight,
                 samples: list | None = None, links: list | None = None,
                 node_info: list | None = None):
        self.flavor = Flavor(flavor)
        self.nodes = list(nodes)
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.weight = np.asarray(weight, dtype=np.float64)
        self.samples = samples
        self.links = links
        self.node_info = node_info if node_info is not None else [{} for _ in self.nodes]
        if len(self.src) and (np.any(self.src >= self.dst) or np.any(self.weight <= 0)):
            raise ValueError("edges must satisfy src < dst and weight > 0")
        self._index = None
        self._csr = None

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def m(self) -> int:
        return len(self.src)

    @property
    def total_weight(self) -> float:
        return float(self.weight.sum())

    @property
    def index(self) -> dict[NodeId, int]:
        if self._index is None:
            self._index = {node: i for i, node in enumerate(self.nodes)}
        return self._index

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric CSR adjacency with sorted column indices."""
        if self._csr is None:
            rows = np.concatenate([self.src, self.dst])
            cols = np.concatenate([self.dst, self.src])
            w = np.concatenate([self.weight, self.weight])
            a = sp.csr_matrix((w, (rows, cols)), shape=(self.n, self.n))
            a.sort_indices()
            self._csr = a
        return self._csr

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency()
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    def degree(self) -> np.ndarray:
        """Weighted degree of every node."""
        deg = np.zeros(self.n)
        np.add.at(deg, self.src, self.weight)
        np.add.at(deg, self.dst, self.weight)
        return deg

    def edges(self) -> Iterator[tuple[int, int, float]]:
        return zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist())

    def edge_dict(self) -> dict[tuple[NodeId, NodeId], float]:
        return {(self.nodes[a], self.nodes[b]): w for a, b, w in self.edges()}

    def witnesses(self, e: int) -> tuple[tuple, tuple]:
        s = self.samples[e] if self.samples is not None else ()
        lk = self.links[e] if self.links is not None else ()
        return s, lk

    def subgraph(self, keep: Iterable[int]) -> "ThreatNetwork":
        """Induced subgraph on ``keep``; node order follows ascending old id."""
        keep = np.unique(np.fromiter(keep, dtype=np.int64))
        remap = np.full(self.n, -1, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        mask = (remap[self.src] >= 0) & (remap[self.dst] >= 0) if self.m else np.zeros(0, bool)
        sel = np.flatnonzero(mask)
        return ThreatNetwork(
            self.flavor,
            [self.nodes[i] for i in keep],
            remap[self.src[sel]], remap[self.dst[sel]], self.weight[sel],
            [self.samples[e] for e in sel] if self.samples is not None else None,
            [self.links[e] for e in sel] if self.links is not None else None,
            [self.node_info[i] for i in keep],
        )

    def components(self) -> np.ndarray:
        """Connected-component label for each node."""
        if self.n == 0:
            return np.zeros(0, dtype=np.int64)
        _, labels = connected_components(self.adjacency(), directed=False)
        return labels

    def __repr__(self) -> str:
        return f"ThreatNetwork(flavor={self.flavor.value}, n={self.n}, m={self.m})"


def _edge_weight(samples: tuple, links: tuple) -> int:
    return len(samples) if samples else len(links)


def _majority(values: Iterable[str]) -> str | None:
    c = Counter(v for v in values if v)
    if not c:
        return None
    return min(c.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def project(g: HeteroGraph, flavor: Flavor | str) -> ThreatNetwork:
    """Collapse samples out of ``g``, keeping only indicators of ``flavor``.

    Every pair of same-flavor indicators observed by one sample becomes an
    edge whose weight is the number of distinct samples sharing the pair.
    DNS resolutions are carried over as follows: the combined flavor keeps
    each domain-ip resolution as an edge; the IP flavor links two addresses
    that share a resolving domain and the domain flavor links two domains
    that share an address. An edge without sample evidence weighs the number
    of distinct resolution witnesses.
    """
    flavor = Flavor(flavor)
    kinds = flavor.kinds
    nodes = sorted(n for n in g.indicators if n.kind in kinds)
    idx = {n: i for i, n in enumerate(nodes)}
    ev_samples: dict[tuple[int, int], set] = {}
    ev_links: dict[tuple[int, int], set] = {}

    for s, nbrs in g.neighbors_of_sample().items():
        ids = sorted(idx[n] for n in nbrs if n in idx)
        for a, b in itertools.combinations(ids, 2):
            ev_samples.setdefault((a, b), set()).add(s)

    if flavor is Flavor.COMBINED:
        for d, i in g.resolution:
            a, b = sorted((idx[d], idx[i]))
            ev_links.setdefault((a, b), set()).add(f"{d.key}>{i.key}")
    else:
        # group resolution partners by the bridging node of the other kind
        groups: dict[NodeId, list[int]] = {}
        for d, i in g.resolution:
            if flavor is Flavor.IP:
                groups.setdefault(d, []).append(idx[i])
            else:
                groups.setdefault(i, []).append(idx[d])
        for via, members in groups.items():
            for a, b in itertools.combinations(sorted(set(members)), 2):
                ev_links.setdefault((a, b), set()).add(via.key)

    keys = sorted(set(ev_samples) | set(ev_links))
    samples = [tuple(sorted(ev_samples.get(k, ()))) for k in keys]
    links = [tuple(sorted(ev_links.get(k, ()))) for k in keys]
    weight = [_edge_weight(s, lk) for s, lk in zip(samples, links)]

    fam_of: dict[NodeId, list] = {}
    for s, n in g.observed:
        if n in idx:
            fam_of.setdefault(n, []).append(g.samples.get(s))
    info = []
    for n in nodes:
        fams = fam_of.get(n, [])
        d = {"sources": tuple(sorted(g.indicators[n]))}
        d["families"] = tuple(sorted({f for f in fams if f}))
        fam = _majority(fams)
        if fam:
            d["family"] = fam
        info.append(d)

    return ThreatNetwork(
        flavor, nodes,
        [k[0] for k in keys], [k[1] for k in keys], weight,
        samples, links, info,
    )


def prune_weak(tn: ThreatNetwork, min_degree: float = 1, min_component: int = 1) -> ThreatNetwork:
    """Peel nodes whose weighted degree is below ``min_degree``, then drop small components.

    Peeling is iterated (removing a node lowers its neighbours' degrees) so
    the survivors form the weighted ``min_degree``-core. Components with
    fewer than ``min_component`` nodes are removed afterwards; this cannot
    lower any surviving degree, so the result is a fixpoint.
    """
    if min_degree < 0 or min_component < 1:
        raise ValueError("need min_degree >= 0 and min_component >= 1")
    if tn.n == 0:
        return tn
    a = tn.adjacency()
    indptr, indices, data = a.indptr, a.indices, a.data
    deg = tn.degree()
    alive = np.ones(tn.n, dtype=bool)
    # tolerance guards against float residue from repeated subtraction
    tol = 1e-9
    queue = deque(np.flatnonzero(deg < min_degree - tol).tolist())
    alive[list(queue)] = False
    while queue:
        v = queue.popleft()
        for p in range(indptr[v], indptr[v + 1]):
            u = indices[p]
            if alive[u]:
                deg[u] -= data[p]
                if deg[u] < min_degree - tol:
                    alive[u] = False
                    queue.append(u)
    core = tn.subgraph(np.flatnonzero(alive))
    if min_component <= 1 or core.n == 0:
        return core
    labels = core.components()
    sizes = np.bincount(labels)
    return core.subgraph(np.flatnonzero(sizes[labels] >= min_component))


# -------------------------------------------------------------- random graphs


@dataclass(frozen=True)
class RandomGraphSpec:
    n: int
    p: float
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")

    @classmethod
    def with_mean_degree(cls, n: int, mean_degree: float, seed: int = 0) -> "RandomGraphSpec":
        return cls(n, min(1.0, mean_degree / max(n - 1, 1)), seed)

    @property
    def expected_edges(self) -> float:
        return self.n * (self.n - 1) / 2 * self.p


def _synthetic_nodes(n: int) -> list[NodeId]:
    if n > 0xDF000000 - _SYNTHETIC_BASE:
        raise CapacityError(f"{n} nodes exceed the synthetic address space")
    return [NodeId(NodeKind.IP, int_to_ip(_SYNTHETIC_BASE + i)) for i in range(n)]


def _unrank_pairs(k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map linear indices over {(j, i): j < i} in lower-triangular order to pairs."""
    i = ((1 + np.sqrt(1 + 8 * k.astype(np.float64))) // 2).astype(np.int64)
    # float sqrt can be off by one for large k
    too_big = i * (i - 1) // 2 > k
    while too_big.any():
        i[too_big] -= 1
        too_big = i * (i - 1) // 2 > k
    too_small = (i + 1) * i // 2 <= k
    while too_small.any():
        i[too_small] += 1
        too_small = (i + 1) * i // 2 <= k
    j = k - i * (i - 1) // 2
    return j, i


def gen_random(spec: RandomGraphSpec) -> ThreatNetwork:
    """Sample an Erdos-Renyi G(n, p) graph, deterministic for a given seed."""
    n, p = spec.n, spec.p
    if spec.expected_edges > MAX_RANDOM_EDGES:
        raise CapacityError(
            f"G(n={n}, p={p}) expects {spec.expected_edges:.3g} edges (limit {MAX_RANDOM_EDGES})")
    rng = np.random.default_rng(spec.seed)
    total = n * (n - 1) // 2
    try:
        if total == 0 or p == 0.0:
            k = np.zeros(0, dtype=np.int64)
        elif p == 1.0:
            k = np.arange(total, dtype=np.int64)
        else:
            m = int(rng.binomial(total, p))
            k = np.unique(rng.integers(0, total, size=m, dtype=np.int64))
            while len(k) < m:
                extra = rng.integers(0, total, size=m - len(k), dtype=np.int64)
                k = np.unique(np.concatenate([k, extra]))
        j, i = _unrank_pairs(k)
        order = np.lexsort((i, j))
        src, dst = j[order], i[order]
        nodes = _synthetic_nodes(n)
    except MemoryError as exc:
        raise CapacityError(f"out of memory generating G(n={n}, p={p})") from exc
    return ThreatNetwork(Flavor.COMBINED, nodes, src, dst, np.ones(len(src)))


def gen_planted_partition(sizes: Sequence[int], p_in: float, p_out: float,
                          seed: int = 0) -> tuple[ThreatNetwork, np.ndarray]:
    """Stochastic block model with equal in/out probabilities across blocks.

    Returns the network and the planted block label of each node.
    """
    labels = np.repeat(np.arange(len(sizes)), sizes)
    n = len(labels)
    if n * (n - 1) // 2 > 20_000_000:
        raise CapacityError("planted-partition generator is meant for small graphs")
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p_in, p_out)
    hit = rng.random(len(iu)) < prob
    src, dst = iu[hit], ju[hit]
    tn = ThreatNetwork(Flavor.COMBINED, _synthetic_nodes(n), src, dst, np.ones(len(src)))
    return tn, labels


def from_edges(edges: Iterable[tuple], n: int | None = None,
               flavor: Flavor = Flavor.COMBINED) -> ThreatNetwork:
    """Small-graph helper: build a network over synthetic nodes from (a, b[, w]) tuples."""
    acc: dict[tuple[int, int], float] = {}
    top = -1
    for e in edges:
        a, b = int(e[0]), int(e[1])
        w = float(e[2]) if len(e) > 2 else 1.0
        if a == b:
            raise ValueError("self-loops are not allowed")
        key = (min(a, b), max(a, b))
        acc[key] = acc.get(key, 0.0) + w
        top = max(top, a, b)
    n = top + 1 if n is None else n
    keys = sorted(acc)
    return ThreatNetwork(flavor, _synthetic_nodes(n), [k[0] for k in keys],
                         [k[1] for k in keys], [acc[k] for k in keys])


def binomial_edge_bounds(n: int, p: float, sigmas: float = 3.0) -> tuple[float, float, float]:
    """Mean and ``sigmas``-wide interval of the G(n, p) edge count."""
    pairs = n * (n - 1) / 2
    mean = pairs * p
    sd = math.sqrt(pairs * p * (1 - p))
    return mean, mean - sigmas * sd, mean + sigmas * sd

"""Louvain community detection with a resolution parameter.

Modularity follows the weighted Newman form

    Q = sum_c [ in_c / 2m  -  gamma * (tot_c / 2m)^2 ]

where ``in_c`` sums adjacency entries inside community ``c`` (each internal
edge counted from both ends, a self-loop entry once), ``tot_c`` sums the
weighted degrees of its nodes and ``m`` is the total edge weight. Larger
``gamma`` favours more, smaller communities.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyGraph
from .graph import NodeId, ThreatNetwork


@dataclass(frozen=True)
class LouvainParams:
    resolution: float = 1.0
    min_gain: float = 1e-7
    max_passes: int = 32
    seed: int | None = None      # None: visit nodes in ascending id order
    check_every: int = 0         # >0: verify every k-th move against a full recompute

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be > 0")
        if self.min_gain <= 0:
            raise ValueError("min_gain must be > 0")
        if self.max_passes < 1:
            raise ValueError("max_passes must be >= 1")


@dataclass
class Partition:
    assignment: np.ndarray
    modularity: float
    resolution: float = 1.0
    history: list = field(default_factory=list)      # modularity after each pass
    move_checks: list = field(default_factory=list)  # (predicted gain, recomputed gain)

    @property
    def n_communities(self) -> int:
        return int(self.assignment.max()) + 1 if len(self.assignment) else 0

    def communities(self) -> list[np.ndarray]:
        order = np.argsort(self.assignment, kind="stable")
        bounds = np.cumsum(np.bincount(self.assignment, minlength=self.n_communities))
        return np.split(order, bounds[:-1])

    def to_json(self, tn: ThreatNetwork) -> dict:
        _, bridges = split(tn, self)
        return {
            "resolution": self.resolution,
            "modularity": self.modularity,
            "communities": [
                {"id": c, "nodes": [str(tn.nodes[i]) for i in members]}
                for c, members in enumerate(self.communities())
            ],
            "bridges": [{"a": str(a), "b": str(b), "w": _num(w)} for a, b, w in bridges],
        }

    @classmethod
    def from_json(cls, obj: dict, tn: ThreatNetwork) -> "Partition":
        assign = np.full(tn.n, -1, dtype=np.int64)
        lookup = {str(n): i for i, n in enumerate(tn.nodes)}
        for block in obj["communities"]:
            for key in block["nodes"]:
                assign[lookup[key]] = block["id"]
        if (assign < 0).any():
            raise ValueError("partition does not cover every node")
        return cls(assign, obj["modularity"], obj["resolution"])


def _num(w: float):
    return int(w) if float(w).is_integer() else float(w)


def modularity(tn: ThreatNetwork, assignment, resolution: float = 1.0) -> float:
    """Weighted modularity of ``assignment`` computed from scratch."""
    m = tn.total_weight
    if m <= 0:
        raise EmptyGraph("modularity is undefined without edges")
    c = np.asarray(assignment, dtype=np.int64)
    m2 = 2.0 * m
    nc = int(c.max()) + 1
    same = c[tn.src] == c[tn.dst]
    inner = np.bincount(c[tn.src[same]], weights=2.0 * tn.weight[same], minlength=nc)
    tot = np.bincount(c, weights=tn.degree(), minlength=nc)
    return float(np.sum(inner / m2 - resolution * (tot / m2) ** 2))


class _Level:
    """Aggregated graph for one Louvain level; self-loops hold internal weight."""

    __slots__ = ("nbrs", "wts", "loop", "k")

    def __init__(self, nbrs, wts, loop, k):
        self.nbrs, self.wts, self.loop, self.k = nbrs, wts, loop, k

    @classmethod
    def from_network(cls, tn: ThreatNetwork) -> "_Level":
        a = tn.adjacency()
        ptr, idx, dat = a.indptr.tolist(), a.indices.tolist(), a.data.tolist()
        nbrs = [idx[ptr[i]:ptr[i + 1]] for i in range(tn.n)]
        wts = [dat[ptr[i]:ptr[i + 1]] for i in range(tn.n)]
        k = [sum(w) for w in wts]
        return cls(nbrs, wts, [0.0] * tn.n, k)

    def modularity(self, comm, m2, gamma) -> float:
        inner: dict = {}
        tot: dict = {}
        for i, ci in enumerate(comm):
            tot[ci] = tot.get(ci, 0.0) + self.k[i]
            s = self.loop[i]
            for j, w in zip(self.nbrs[i], self.wts[i]):
                if comm[j] == ci:
                    s += w
            inner[ci] = inner.get(ci, 0.0) + s
        return sum(inner[c] / m2 - gamma * (tot[c] / m2) ** 2 for c in tot)

    def aggregate(self, comm, n_comm) -> "_Level":
        loop = [0.0] * n_comm
        k = [0.0] * n_comm
        links = [dict() for _ in range(n_comm)]
        for i, ci in enumerate(comm):
            loop[ci] += self.loop[i]
            k[ci] += self.k[i]
            row = links[ci]
            for j, w in zip(self.nbrs[i], self.wts[i]):
                cj = comm[j]
                if cj == ci:
                    loop[ci] += w
                else:
                    row[cj] = row.get(cj, 0.0) + w
        nbrs = [sorted(row) for row in links]
        wts = [[row[j] for j in nb] for row, nb in zip(links, nbrs)]
        return _Level(nbrs, wts, loop, k)


def _local_moving(level: _Level, m2, params: LouvainParams, rng, checks: list):
    """Greedy single-node moves until a sweep gains no more than ``min_gain``.

    After the first sweep only nodes with a neighbour that changed community
    are re-evaluated. Returns the community of each level node and whether
    any node moved.
    """
    gamma = params.resolution
    n = len(level.k)
    comm = list(range(n))
    tot = list(level.k)
    nbrs, wts, kk = level.nbrs, level.wts, level.k
    order = list(range(n))
    dirty = [True] * n
    moved_any = False
    n_moves = 0
    neg_inf = float("-inf")
    while True:
        if rng is not None:
            rng.shuffle(order)
        sweep_gain = 0.0
        moves = 0
        for i in order:
            if not dirty[i]:
                continue
            dirty[i] = False
            ci = comm[i]
            ki = kk[i]
            nb = nbrs[i]
            neigh: dict = {}
            get = neigh.get
            for j, w in zip(nb, wts[i]):
                cj = comm[j]
                neigh[cj] = get(cj, 0.0) + w
            tot[ci] -= ki
            scale = gamma * ki / m2
            stay = get(ci, 0.0) - tot[ci] * scale
            best_c, best = -1, neg_inf
            for c, kin in neigh.items():
                if c == ci:
                    continue
                g = kin - tot[c] * scale
                if g > best or (g == best and c < best_c):
                    best, best_c = g, c
            if best_c >= 0 and best > stay:
                gain = 2.0 * (best - stay) / m2
                n_moves += 1
                check = params.check_every and n_moves % params.check_every == 0
                if check:
                    before = level.modularity(comm, m2, gamma)
                comm[i] = best_c
                tot[best_c] += ki
                if check:
                    after = level.modularity(comm, m2, gamma)
                    checks.append((gain, after - before))
                    if abs(gain - (after - before)) > 1e-9:
                        raise AssertionError(
                            f"incremental gain {gain} != recomputed {after - before}")
                for j in nb:
                    dirty[j] = True
                sweep_gain += gain
                moves += 1
            else:
                tot[ci] += ki
        if moves:
            moved_any = True
        if moves == 0 or sweep_gain <= params.min_gain:
            return comm, moved_any


def _renumber(comm) -> tuple[list, int]:
    """Relabel communities 0..k-1 in order of first appearance."""
    new: dict = {}
    out = []
    for c in comm:
        if c not in new:
            new[c] = len(new)
        out.append(new[c])
    return out, len(new)


def detect(tn: ThreatNetwork, params: LouvainParams = LouvainParams()) -> Partition:
    """Partition ``tn`` by Louvain local moving and aggregation.

    Runs at most ``params.max_passes`` passes and stops early once a pass
    leaves every (super-)node where it was. The returned modularity is
    recomputed on the original graph.
    """
    if tn.n == 0 or tn.total_weight <= 0:
        raise EmptyGraph("community detection needs at least one weighted edge")
    m2 = 2.0 * tn.total_weight
    rng = random.Random(params.seed) if params.seed is not None else None
    level = _Level.from_network(tn)
    node_comm = list(range(tn.n))
    history = [modularity(tn, np.arange(tn.n), params.resolution)]
    checks: list = []
    for _ in range(params.max_passes):
        comm, moved = _local_moving(level, m2, params, rng, checks)
        if not moved:
            break
        comm, n_comm = _renumber(comm)
        node_comm = [comm[c] for c in node_comm]
        history.append(modularity(tn, node_comm, params.resolution))
        if n_comm == len(level.k):
            break
        level = level.aggregate(comm, n_comm)
    assignment, _ = _renumber(node_comm)
    assignment = np.asarray(assignment, dtype=np.int64)
    q = modularity(tn, assignment, params.resolution)
    return Partition(assignment, q, params.resolution, history, checks)


def split(tn: ThreatNetwork, partition: Partition) -> tuple[list[ThreatNetwork], list[tuple[NodeId, NodeId, float]]]:
    """Induced subnetwork per community, plus the inter-community bridge edges."""
    c = partition.assignment
    if len(c) != tn.n:
        raise ValueError("partition does not match network")
    subs = [tn.subgraph(members) for members in partition.communities()]
    cross = np.flatnonzero(c[tn.src] != c[tn.dst]) if tn.m else []
    bridges = [(tn.nodes[tn.src[e]], tn.nodes[tn.dst[e]], float(tn.weight[e])) for e in cross]
    return subs, bridges


def adjusted_rand_index(a, b) -> float:
    """Adjusted Rand index between two labelings of the same items."""
    a = np.unique(np.asarray(a), return_inverse=True)[1]
    b = np.unique(np.asarray(b), return_inverse=True)[1]
    table = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(table, (a, b), 1)

    def pairs(x):
        return float(np.sum(x * (x - 1) / 2))

    n = len(a)
    sum_ij = pairs(table)
    sum_a = pairs(table.sum(axis=1))
    sum_b = pairs(table.sum(axis=0))
    expected = sum_a * sum_b / (n * (n - 1) / 2)
    top = (sum_a + sum_b) / 2
    if top == expected:
        return 1.0
    return (sum_ij - expected) / (top - expected)

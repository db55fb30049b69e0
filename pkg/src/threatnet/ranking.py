"""PageRank over threat networks and the mitigation priority list."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import EmptyGraph
from .graph import Flavor, NodeId, NodeKind, ThreatNetwork


@dataclass(frozen=True)
class PageRankParams:
    damping: float = 0.85
    epsilon: float = 0.001
    max_iters: int = 100

    def __post_init__(self):
        if not 0 < self.damping < 1:
            raise ValueError("damping must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")


@dataclass
class RankVector:
    pr: np.ndarray
    iterations: int
    converged: bool
    residuals: list = field(default_factory=list)   # L1 change per iteration
    sums: list = field(default_factory=list)        # sum of the vector per iteration


def transition_matrix(tn: ThreatNetwork) -> tuple[sp.csr_matrix, np.ndarray]:
    """Column-stochastic ``W`` with ``W[i, j] = w(j, i) / deg(j)`` and the dangling mask."""
    a = tn.adjacency()
    deg = np.asarray(a.sum(axis=0)).ravel()
    dangling = deg == 0
    inv = np.zeros_like(deg)
    inv[~dangling] = 1.0 / deg[~dangling]
    # symmetric adjacency: scaling column j by 1/deg(j) gives W directly
    w = (a @ sp.diags(inv)).tocsr()
    return w, dangling


def pagerank(tn: ThreatNetwork, params: PageRankParams = PageRankParams()) -> RankVector:
    """Power iteration ``pr <- d * W pr + d * dangling / N + (1 - d) / N``.

    Starts from the uniform vector and stops once the L1 change between two
    iterates falls below ``epsilon``. Dangling mass is spread uniformly.
    """
    n = tn.n
    if n == 0:
        raise EmptyGraph("pagerank needs at least one node")
    if n == 1:
        return RankVector(np.ones(1), 0, True, [], [1.0])
    d = params.damping
    w, dangling = transition_matrix(tn)
    pr = np.full(n, 1.0 / n)
    residuals, sums = [], []
    teleport = (1.0 - d) / n
    for it in range(1, params.max_iters + 1):
        new = d * (w @ pr) + (d * pr[dangling].sum() / n + teleport)
        # renormalise away floating-point drift
        new /= new.sum()
        delta = float(np.abs(new - pr).sum())
        residuals.append(delta)
        sums.append(float(new.sum()))
        pr = new
        if delta < params.epsilon:
            return RankVector(pr, it, True, residuals, sums)
    return RankVector(pr, params.max_iters, False, residuals, sums)


@dataclass(frozen=True)
class PriorityEntry:
    node: NodeId
    pagerank: float
    degree: float
    community: int | None = None


@dataclass
class PriorityList:
    entries: list
    by_kind: dict = field(default_factory=dict)   # NodeKind -> list of entries

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def to_csv(self, entries: list | None = None) -> str:
        return priority_csv([self.entries if entries is None else entries])


def priority_csv(groups: list) -> str:
    """CSV ``rank,kind,key,pagerank,degree,community``; rank restarts for each group."""
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["rank", "kind", "key", "pagerank", "degree", "community"])
    for entries in groups:
        for r, e in enumerate(entries, 1):
            out.writerow([r, e.node.kind.value, e.node.key, repr(float(e.pagerank)),
                          _num(e.degree), "" if e.community is None else e.community])
    return buf.getvalue()


def _num(x: float):
    return int(x) if float(x).is_integer() else float(x)


# Ranks that differ only by accumulated rounding are treated as ties.
_RANK_DIGITS = 12


def priority_list(tn: ThreatNetwork, rv: RankVector, partition=None) -> PriorityList:
    """Sort nodes by PageRank, then weighted degree (both descending), then key."""
    if len(rv.pr) != tn.n:
        raise ValueError("rank vector does not match network")
    deg = tn.degree()
    comm = partition.assignment if partition is not None else None
    entries = [
        PriorityEntry(tn.nodes[i], float(rv.pr[i]), float(deg[i]),
                      None if comm is None else int(comm[i]))
        for i in range(tn.n)
    ]
    entries.sort(key=lambda e: (-round(e.pagerank, _RANK_DIGITS), -e.degree, e.node.key))
    by_kind = {}
    if tn.flavor is Flavor.COMBINED:
        for kind in (NodeKind.IP, NodeKind.DOMAIN):
            by_kind[kind] = [e for e in entries if e.node.kind is kind]
    return PriorityList(entries, by_kind)


def community_priority_lists(tn: ThreatNetwork, partition,
                             params: PageRankParams = PageRankParams()) -> list[PriorityList]:
    """Rank each community on its own induced subnetwork."""
    from .community import split

    subs, _ = split(tn, partition)
    out = []
    for c, sub in enumerate(subs):
        rv = pagerank(sub, params)
        pl = priority_list(sub, rv)
        pl.entries = [PriorityEntry(e.node, e.pagerank, e.degree, c) for e in pl.entries]
        pl.by_kind = {k: [PriorityEntry(e.node, e.pagerank, e.degree, c) for e in v]
                      for k, v in pl.by_kind.items()}
        out.append(pl)
    return out

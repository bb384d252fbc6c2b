"""Centrality and community structure of co-activation graphs.

Correlations are signed, but both PageRank and modularity assume
non-negative weights, so every analysis here runs on ``|w|``.  Nodes with
zero weighted degree (constant neurons, or neurons whose edges were all
thresholded away) are treated as isolated: they score 0 and sit in
singleton communities that do not affect modularity.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .coactivation import CoactivationGraph, NeuronId
from .errors import GraphError

OVERLAP_METHOD = "greedy-max-intersection"


@dataclass(frozen=True, eq=False)
class PageRankResult:
    nodes: tuple
    scores: np.ndarray
    damping: float
    epsilon: float
    iterations: int
    converged: bool
    residual: float
    zero_variance: frozenset = frozenset()  # node positions

    def score(self, neuron: NeuronId) -> float:
        return float(self.scores[self.nodes.index(neuron)])

    def as_dict(self) -> dict:
        return {n: float(s) for n, s in zip(self.nodes, self.scores)}


def pagerank(g: CoactivationGraph, d: float = 0.85, eps: float = 1e-8, max_iter: int = 10_000) -> PageRankResult:
    """Weighted PageRank with all-ones initialization and an L1 stopping rule.

    ``PR(i) = (1 - d) / N + d * sum_j |w_ij| PR(j) / D(j)`` where ``D(j)`` is
    the weighted degree and ``N`` counts the non-isolated nodes.  The fixed
    point has unit mass; the converged vector is rescaled onto it to remove
    the residual of the stopping tolerance.
    """
    if not 0 <= d < 1:
        raise ValueError(f"damping must lie in [0, 1), got {d}")
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    a = g.adjacency()
    degree = a.sum(axis=1)
    active = np.flatnonzero(degree > 0)
    scores = np.zeros(g.n_nodes)
    zv = frozenset(g.excluded)
    if active.size == 0:
        return PageRankResult(g.nodes, scores, d, eps, 0, True, 0.0, zv)
    sub = a[np.ix_(active, active)]
    transition = sub / degree[active]  # column j scaled by 1/D(j)
    n = active.size
    pr = np.ones(n)
    converged, residual, it = False, float("inf"), 0
    for it in range(1, max_iter + 1):
        nxt = (1 - d) / n + d * (transition @ pr)
        residual = float(np.abs(nxt - pr).sum())
        pr = nxt
        if residual < eps:
            converged = True
            break
    if converged:
        pr = pr / pr.sum()
    scores[active] = pr
    return PageRankResult(g.nodes, scores, d, eps, it, converged, residual, zv)


def top_k(r: PageRankResult, k: int = 50) -> list:
    """The ``k`` highest-scoring neurons; ties go to the lower (layer, index)."""
    if k < 1:
        raise ValueError("k must be at least 1")
    order = sorted(range(len(r.nodes)), key=lambda p: (-r.scores[p], r.nodes[p]))
    return [(r.nodes[p], float(r.scores[p])) for p in order[:k]]


def feature_ranking(r: PageRankResult, feature_names: Sequence[str] | None = None) -> list:
    """Input features by descending score; constant features last with score 0."""
    inputs = [p for p, n in enumerate(r.nodes) if n.layer == 0]
    if not inputs:
        raise GraphError("graph has no input-layer nodes to rank")
    names = list(feature_names) if feature_names is not None else [f"f{r.nodes[p].index}" for p in inputs]
    order = sorted(inputs, key=lambda p: (p in r.zero_variance, -r.scores[p], r.nodes[p].index))
    return [(names[r.nodes[p].index], float(r.scores[p])) for p in order]


# --------------------------------------------------------------------------- communities

@dataclass(frozen=True, eq=False)
class Partition:
    nodes: tuple
    assignment: tuple  # community id per node position, contiguous from 0
    modularity: float
    history: tuple = ()  # modularity after each aggregation phase
    seed: int | None = None

    @property
    def n_communities(self) -> int:
        return len(set(self.assignment))

    def communities(self) -> list:
        out = [[] for _ in range(self.n_communities)]
        for node, c in zip(self.nodes, self.assignment):
            out[c].append(node)
        return out


def _modularity_matrix(a: np.ndarray, assignment) -> float:
    m2 = a.sum()
    k = a.sum(axis=1)
    c = np.asarray(assignment)
    same = c[:, None] == c[None, :]
    return float(((a - np.outer(k, k) / m2) * same).sum() / m2)


def modularity(g: CoactivationGraph, part) -> float:
    """Direct evaluation of ``Q = 1/2m sum_ij (A_ij - k_i k_j / 2m) [c_i = c_j]`` with ``A = |w|``.

    ``part`` is a :class:`Partition` or a sequence of community ids per node;
    isolated nodes may carry ``None``.
    """
    assignment = part.assignment if isinstance(part, Partition) else tuple(part)
    if len(assignment) != g.n_nodes:
        raise GraphError(f"partition covers {len(assignment)} nodes, graph has {g.n_nodes}")
    a = g.adjacency()
    degree = a.sum(axis=1)
    if degree.sum() == 0:
        raise GraphError("modularity is undefined on a graph without weighted edges")
    ids = []
    for pos, c in enumerate(assignment):
        if c is None:
            if degree[pos] > 0:
                raise GraphError(f"node {g.nodes[pos]} has edges but no community")
            c = -1 - pos  # private community
        ids.append(c)
    return _modularity_matrix(a, ids)


def _local_moves(a: np.ndarray, order: np.ndarray, m2: float, tol: float = 1e-12) -> tuple:
    """One Louvain local-moving phase on weighted matrix ``a`` (self-loops allowed)."""
    n = a.shape[0]
    comm = np.arange(n)
    k = a.sum(axis=1)
    tot = k.copy()
    moved_any = False
    improved = True
    while improved:
        improved = False
        for i in order:
            ci = comm[i]
            tot[ci] -= k[i]
            links = np.bincount(comm, weights=a[i], minlength=n)
            links[ci] -= a[i, i]
            gain = links - tot * k[i] / m2
            candidates = np.unique(comm[a[i] > 0])
            best, best_gain = ci, gain[ci]
            for c in candidates:
                if gain[c] > best_gain + tol:
                    best, best_gain = c, gain[c]
            comm[i] = best
            tot[best] += k[i]
            if best != ci:
                improved = moved_any = True
    _, comm = np.unique(comm, return_inverse=True)
    return comm, moved_any


def louvain(g: CoactivationGraph, seed: int | None = None) -> Partition:
    """Two-phase Louvain modularity optimization on ``|w|``.

    Nodes are visited in canonical order unless ``seed`` is given, in which
    case each phase visits them in a seeded random order.
    """
    a = g.adjacency()
    degree = a.sum(axis=1)
    m2 = a.sum()
    if m2 == 0:
        raise GraphError("louvain needs at least one edge with nonzero weight")
    rng = np.random.default_rng(seed) if seed is not None else None
    active = np.flatnonzero(degree > 0)
    level = a[np.ix_(active, active)]
    membership = np.arange(active.size)  # active node -> current super-node
    history = []
    while True:
        order = np.arange(level.shape[0])
        if rng is not None:
            rng.shuffle(order)
        comm, moved = _local_moves(level, order, m2)
        if not moved:
            break
        membership = comm[membership]
        onehot = np.zeros((level.shape[0], comm.max() + 1))
        onehot[np.arange(level.shape[0]), comm] = 1.0
        level = onehot.T @ level @ onehot
        history.append(_modularity_matrix(a[np.ix_(active, active)], membership))
    # contiguous ids by first appearance in canonical node order, isolated nodes last
    assignment = [None] * g.n_nodes
    relabel = {}
    for pos, c in zip(active.tolist(), membership.tolist()):
        assignment[pos] = relabel.setdefault(c, len(relabel))
    for pos in range(g.n_nodes):
        if assignment[pos] is None:
            assignment[pos] = len(relabel)
            relabel[("isolated", pos)] = assignment[pos]
    part = Partition(g.nodes, tuple(assignment), 0.0, tuple(history), seed)
    q = modularity(g, part)
    if not history:
        history = [q]
    return Partition(g.nodes, tuple(assignment), q, tuple(history), seed)


# --------------------------------------------------------------------------- overlap

@dataclass(frozen=True)
class OverlapReport:
    pairs: tuple  # ((community in a, community in b, shared nodes), ...) in matching order
    agreement: float
    n_shared: int
    method: str = OVERLAP_METHOD


def community_overlap(a: Partition, b: Partition) -> OverlapReport:
    """Fraction of common nodes whose communities are matched to each other.

    Communities are matched greedily, largest intersection first.  Ties are
    broken by the positions of the communities' first common nodes, in a way
    that does not depend on argument order, so the measure is symmetric.
    """
    index_b = {n: p for p, n in enumerate(b.nodes)}
    shared = [(a.assignment[p], b.assignment[index_b[n]]) for p, n in enumerate(a.nodes) if n in index_b]
    if not shared:
        raise GraphError("the partitions have no nodes in common")
    counts, first_a, first_b = {}, {}, {}
    for k, (ca, cb) in enumerate(shared):
        counts[(ca, cb)] = counts.get((ca, cb), 0) + 1
        first_a.setdefault(ca, k)
        first_b.setdefault(cb, k)

    def key(pair):
        fa, fb = first_a[pair[0]], first_b[pair[1]]
        return (-counts[pair], min(fa, fb), max(fa, fb))

    used_a, used_b, pairs = set(), set(), []
    for ca, cb in sorted(counts, key=key):
        if ca not in used_a and cb not in used_b:
            used_a.add(ca)
            used_b.add(cb)
            pairs.append((ca, cb, counts[(ca, cb)]))
    matched = sum(c for _, _, c in pairs)
    return OverlapReport(tuple(pairs), matched / len(shared), len(shared))


# --------------------------------------------------------------------------- report

@dataclass(frozen=True, eq=False)
class AnalysisReport:
    label: str
    pagerank: PageRankResult
    top: list
    features: list
    partition: Partition
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "params": self.params,
            "pagerank": {"iterations": self.pagerank.iterations, "converged": self.pagerank.converged,
                         "residual": self.pagerank.residual},
            "top_k": [[n.layer, n.index, s] for n, s in self.top],
            "feature_ranking": [[name, s] for name, s in self.features],
            "communities": list(self.partition.assignment),
            "modularity": self.partition.modularity,
            "modularity_history": list(self.partition.history),
            "n_communities": self.partition.n_communities,
        }


def analyze(g: CoactivationGraph, d: float = 0.85, eps: float = 1e-8, k: int = 50,
            seed: int | None = None, max_iter: int = 10_000) -> AnalysisReport:
    """PageRank, top-k neurons, feature ranking and Louvain communities of one graph."""
    pr = pagerank(g, d, eps, max_iter)
    part = louvain(g, seed)
    params = {"d": d, "epsilon": eps, "k": k, "seed": seed, "max_iter": max_iter, **g.options}
    return AnalysisReport(g.label, pr, top_k(pr, k), feature_ranking(pr, g.feature_names or None), part, params)

"""Co-activation graphs.

Every neuron of the network (input features, hidden units and output
Q-values) is a node.  Two nodes are joined by an edge whose weight is the
Pearson correlation of their activations over a set of states.  Neurons whose
activation is constant over the set have no defined correlation.  They stay
in the graph as isolated nodes so that downstream rankings still cover them.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import networkx as nx
import numpy as np

from .errors import DimensionError, GraphError, SampleSizeError
from .policy import MlpPolicy, forward_batch


MIN_SAMPLES = 3
RECOMMENDED_SAMPLES = 30
LAYER_SCOPES = ("all_pairs", "adjacent_layers")


class NeuronId(NamedTuple):
    layer: int  # 0 = input features, last = output Q-values
    index: int

    def __str__(self):
        return f"L{self.layer}:{self.index}"


@dataclass(frozen=True, eq=False)
class ActivationMatrix:
    values: np.ndarray  # (n_states, n_neurons)
    neurons: tuple  # NeuronId per column, layer-major
    zero_variance: np.ndarray  # bool per column
    feature_names: tuple = ()
    action_names: tuple = ()

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]


def collect_activations(p: MlpPolicy, states: Sequence, feature_names: Sequence[str] | None = None) -> ActivationMatrix:
    """Activations of every neuron for every state, one row per state.

    Input columns hold the normalized features the first layer actually sees.
    """
    x = np.asarray(states, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError("states must form a 2-d array")
    if x.shape[1] != p.input_dim:
        raise DimensionError(f"states have {x.shape[1]} features, policy expects {p.input_dim}")
    n = x.shape[0]
    if n < MIN_SAMPLES:
        raise SampleSizeError(f"{n} states is below the minimum of {MIN_SAMPLES} for correlations")
    if n < RECOMMENDED_SAMPLES:
        warnings.warn(f"only {n} states; correlations over fewer than {RECOMMENDED_SAMPLES} samples are noisy",
                      stacklevel=2)
    layers = forward_batch(p, x)
    values = np.hstack(layers)
    values.setflags(write=False)
    neurons = tuple(NeuronId(k, i) for k, a in enumerate(layers) for i in range(a.shape[1]))
    constant = np.all(values == values[0], axis=0)
    names = tuple(feature_names) if feature_names is not None else tuple(f"f{i}" for i in range(p.input_dim))
    return ActivationMatrix(values, neurons, constant, names, p.action_names)


def pearson(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Sample Pearson correlation by the two-pass formula; ``None`` if a series is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"series must be 1-d with equal lengths, got {x.shape} and {y.shape}")
    if len(x) < MIN_SAMPLES:
        raise SampleSizeError(f"need at least {MIN_SAMPLES} observations, got {len(x)}")
    if np.all(x == x[0]) or np.all(y == y[0]):
        return None
    dx = x - x.mean()
    dy = y - y.mean()
    r = float(np.dot(dx, dy) / math.sqrt(float(np.dot(dx, dx)) * float(np.dot(dy, dy))))
    return min(1.0, max(-1.0, r))


def correlation_matrix(values: np.ndarray, zero_variance: np.ndarray | None = None) -> np.ndarray:
    """Pairwise Pearson correlations of the columns; NaN where undefined.

    The result is exactly symmetric with a unit diagonal on non-constant columns.
    """
    values = np.asarray(values, dtype=np.float64)
    if zero_variance is None:
        zero_variance = np.all(values == values[0], axis=0)
    centered = values - values.mean(axis=0)
    cov = centered.T @ centered
    norms = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = cov / np.outer(norms, norms)
    r = np.clip(r, -1.0, 1.0)
    r = np.triu(r, 1)
    r = r + r.T
    np.fill_diagonal(r, 1.0)
    r[zero_variance, :] = np.nan
    r[:, zero_variance] = np.nan
    return r


@dataclass(frozen=True, eq=False)
class CoactivationGraph:
    nodes: tuple  # NeuronId per node position
    src: np.ndarray  # edge endpoints as node positions, src < dst
    dst: np.ndarray
    weight: np.ndarray  # signed correlation per edge
    excluded: dict  # node position -> reason
    label: str = ""
    feature_names: tuple = ()
    action_names: tuple = ()
    options: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.weight)

    def edges(self):
        for i, j, w in zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist()):
            yield i, j, w

    def adjacency(self, absolute: bool = True) -> np.ndarray:
        """Dense symmetric weight matrix, ``|w|`` by default."""
        a = np.zeros((self.n_nodes, self.n_nodes))
        w = np.abs(self.weight) if absolute else self.weight
        a[self.src, self.dst] = w
        a[self.dst, self.src] = w
        return a

    def node_name(self, pos: int) -> str:
        n = self.nodes[pos]
        last = max(v.layer for v in self.nodes)
        if n.layer == 0 and n.index < len(self.feature_names):
            return self.feature_names[n.index]
        if n.layer == last and n.index < len(self.action_names):
            return self.action_names[n.index]
        return str(n)


def build_graph(a: ActivationMatrix, min_abs_weight: float = 0.0, layer_scope: str = "all_pairs",
                label: str = "") -> CoactivationGraph:
    """Edges for in-scope neuron pairs whose correlation magnitude reaches ``min_abs_weight``."""
    if min_abs_weight < 0:
        raise ValueError("min_abs_weight must be non-negative")
    if layer_scope not in LAYER_SCOPES:
        raise ValueError(f"unknown layer scope {layer_scope!r}; expected one of {LAYER_SCOPES}")
    r = correlation_matrix(a.values, a.zero_variance)
    layer = np.array([n.layer for n in a.neurons])
    i, j = np.triu_indices(len(a.neurons), 1)
    w = r[i, j]
    keep = ~np.isnan(w) & (np.abs(w) >= min_abs_weight)
    if layer_scope == "adjacent_layers":
        keep &= np.abs(layer[i] - layer[j]) == 1
    excluded = {int(k): "zero variance" for k in np.flatnonzero(a.zero_variance)}
    options = {"min_abs_weight": min_abs_weight, "layer_scope": layer_scope, "n_samples": a.n_samples}
    return CoactivationGraph(a.neurons, i[keep], j[keep], w[keep], excluded, label,
                             a.feature_names, a.action_names, options)


# --------------------------------------------------------------------------- export

def to_networkx(g: CoactivationGraph) -> nx.Graph:
    out = nx.Graph(label=g.label)
    for pos, n in enumerate(g.nodes):
        out.add_node(str(n), layer=n.layer, index=n.index, name=g.node_name(pos),
                     zero_variance=pos in g.excluded)
    for i, j, w in g.edges():
        out.add_edge(str(g.nodes[i]), str(g.nodes[j]), weight=w)
    return out


def write_graphml(g: CoactivationGraph, path) -> None:
    nx.write_graphml(to_networkx(g), str(path))


def to_dot(g: CoactivationGraph) -> str:
    lines = ["graph coactivation {"]
    for pos, n in enumerate(g.nodes):
        zv = "true" if pos in g.excluded else "false"
        lines.append(f'  "{n}" [layer={n.layer}, index={n.index}, zero_variance={zv}, label="{g.node_name(pos)}"];')
    for i, j, w in g.edges():
        lines.append(f'  "{g.nodes[i]}" -- "{g.nodes[j]}" [weight={w!r}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def to_adjacency_csv(g: CoactivationGraph) -> str:
    lines = ["i_layer,i_idx,j_layer,j_idx,weight"]
    for i, j, w in g.edges():
        a, b = g.nodes[i], g.nodes[j]
        lines.append(f"{a.layer},{a.index},{b.layer},{b.index},{w!r}")
    return "\n".join(lines) + "\n"


def write_graph(g: CoactivationGraph, stem) -> dict:
    """Write GraphML, DOT and adjacency CSV next to ``stem``."""
    stem = Path(stem)
    paths = {"graphml": stem.with_suffix(".graphml"), "dot": stem.with_suffix(".dot"),
             "csv": stem.with_suffix(".edges.csv")}
    write_graphml(g, paths["graphml"])
    paths["dot"].write_text(to_dot(g), encoding="utf-8")
    paths["csv"].write_text(to_adjacency_csv(g), encoding="utf-8")
    return paths


def read_adjacency_csv(text: str, nodes: Sequence[NeuronId], label: str = "") -> CoactivationGraph:
    """Rebuild a graph from an adjacency CSV over a known node list."""
    pos = {n: k for k, n in enumerate(nodes)}
    src, dst, w = [], [], []
    for line_no, line in enumerate(text.splitlines()[1:], start=2):
        try:
            il, ii, jl, ji, weight = line.split(",")
            src.append(pos[NeuronId(int(il), int(ii))])
            dst.append(pos[NeuronId(int(jl), int(ji))])
            w.append(float(weight))
        except (KeyError, ValueError) as exc:
            raise GraphError(f"adjacency line {line_no} is malformed: {exc}") from None
    return CoactivationGraph(tuple(nodes), np.array(src, dtype=np.intp), np.array(dst, dtype=np.intp),
                             np.array(w), {}, label)

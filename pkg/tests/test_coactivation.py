import math
import warnings

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coactiv.coactivation import (
    NeuronId,
    build_graph,
    collect_activations,
    correlation_matrix,
    pearson,
    read_adjacency_csv,
    to_adjacency_csv,
    to_dot,
    to_networkx,
    write_graph,
)
from coactiv.errors import DimensionError, SampleSizeError
from coactiv.policy import init_policy, make_policy


def two_two_two():
    """2 inputs, 2 hidden units, 2 outputs; hidden unit 1 is always dead."""
    return make_policy([
        (np.array([[1.0, 0.5], [-1.0, -1.0]]), np.array([0.0, -1.0]), "relu"),
        (np.array([[1.0, 0.0], [0.5, 2.0]]), np.array([0.0, 1.0]), "linear"),
    ], ("a", "b"))


def two_pass(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def test_activation_matrix_shape_and_dead_unit():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = collect_activations(two_two_two(), [(0, 1), (1, 0), (2, 2)])
    assert a.values.shape == (3, 6)
    assert a.neurons == tuple(NeuronId(k, i) for k in range(3) for i in range(2))
    assert a.zero_variance.tolist() == [False, False, False, True, False, False]


def test_sample_size_limits():
    p = two_two_two()
    with pytest.raises(SampleSizeError):
        collect_activations(p, [(0, 1), (1, 0)])
    with pytest.warns(UserWarning):
        collect_activations(p, [(0, 1), (1, 0), (2, 2)])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        collect_activations(p, [(i % 5, i % 7) for i in range(30)])
    with pytest.raises(DimensionError):
        collect_activations(p, [(0, 1, 2)] * 3)


def test_pearson_example():
    assert pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(9 / math.sqrt(84), abs=1e-15)
    assert pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(0.98198, abs=1e-5)
    assert pearson([1, 1, 1], [1, 2, 3]) is None
    with pytest.raises(SampleSizeError):
        pearson([1, 2], [2, 1])


def test_pearson_matches_two_pass_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(3, 40))
        x, y = rng.normal(size=n) * rng.uniform(0.1, 10), rng.normal(size=n)
        assert abs(pearson(x, y) - two_pass(x.tolist(), y.tolist())) < 1e-12


def test_correlation_matrix_properties():
    rng = np.random.default_rng(1)
    v = rng.normal(size=(40, 8))
    v[:, 3] = 2.5
    r = correlation_matrix(v)
    live = [k for k in range(8) if k != 3]
    sub = r[np.ix_(live, live)]
    assert np.array_equal(sub, sub.T)
    assert np.all(np.diag(sub) == 1.0)
    assert np.all(np.abs(sub) <= 1.0)
    assert np.all(np.isnan(r[3])) and np.all(np.isnan(r[:, 3]))
    for i in live:
        for j in live:
            if i != j:
                assert abs(r[i, j] - two_pass(v[:, i].tolist(), v[:, j].tolist())) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100), st.floats(-100, 100), st.floats(0.01, 100), st.floats(-100, 100))
def test_affine_invariance(seed, a, b, c, d):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(25, 4))
    w = v.copy()
    w[:, 0] = a * v[:, 0] + b
    w[:, 2] = c * v[:, 2] + d
    assert np.allclose(correlation_matrix(v), correlation_matrix(w), atol=1e-10, rtol=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_state_order_does_not_matter(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(20, 5))
    perm = rng.permutation(20)
    assert np.allclose(correlation_matrix(v), correlation_matrix(v[perm]), atol=1e-12, rtol=0)


def random_activations(seed, n=40):
    rng = np.random.default_rng(seed)
    p = init_policy(3, (5, 4), ("a", "b"), rng)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return collect_activations(p, rng.integers(0, 5, size=(n, 3)), ("x", "y", "z"))


def test_graph_edges_and_exclusions():
    a = random_activations(0)
    g = build_graph(a, label="all")
    live = int((~a.zero_variance).sum())
    assert g.n_nodes == 14
    assert g.n_edges == live * (live - 1) // 2
    assert set(g.excluded) == set(np.flatnonzero(a.zero_variance).tolist())
    assert np.all(g.src < g.dst)
    stricter = build_graph(a, min_abs_weight=0.5)
    assert stricter.n_edges <= g.n_edges
    assert np.all(np.abs(stricter.weight) >= 0.5)
    adjacent = build_graph(a, layer_scope="adjacent_layers")
    layers = np.array([n.layer for n in adjacent.nodes])
    assert np.all(np.abs(layers[adjacent.src] - layers[adjacent.dst]) == 1)
    with pytest.raises(ValueError):
        build_graph(a, layer_scope="nearby")


def test_adjacency_is_symmetric_and_absolute():
    g = build_graph(random_activations(2))
    a = g.adjacency()
    assert np.array_equal(a, a.T) and np.all(a >= 0)
    signed = g.adjacency(absolute=False)
    assert np.array_equal(np.abs(signed), a)


def test_node_names():
    g = build_graph(random_activations(3))
    assert g.node_name(0) == "x"
    assert g.node_name(3) == "L1:0"
    assert g.node_name(g.n_nodes - 1) == "b"


def test_exports(tmp_path):
    g = build_graph(random_activations(4), label="demo")
    nxg = to_networkx(g)
    assert nxg.number_of_nodes() == g.n_nodes and nxg.number_of_edges() == g.n_edges
    paths = write_graph(g, tmp_path / "graph")
    back = nx.read_graphml(paths["graphml"])
    assert back.number_of_edges() == g.n_edges
    for i, j, w in g.edges():
        assert back.edges[str(g.nodes[i]), str(g.nodes[j])]["weight"] == pytest.approx(w, abs=1e-15)
    dot = to_dot(g)
    assert dot.startswith("graph coactivation {") and dot.count(" -- ") == g.n_edges
    again = read_adjacency_csv(to_adjacency_csv(g), g.nodes)
    assert np.array_equal(again.adjacency(absolute=False), g.adjacency(absolute=False))
    assert paths["csv"].read_text() == to_adjacency_csv(g)

import itertools

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import replay
from shapg.data import CorrelationMatrix, Dataset, pearson_matrix
from shapg.graph import (
    FeatureGraph,
    GraphError,
    build_feature_graph,
    export_dot,
    induced_edge_weight_sum,
    is_connected,
    neighborhood,
    parse_dot_edges,
    read_adjacency_csv,
)


def corr_from_pairs(n, pairs):
    W = np.zeros((n, n))
    for (i, j), w in pairs.items():
        W[i, j] = W[j, i] = w
    return CorrelationMatrix(W)


def random_corr(seed, M=None):
    """Correlation of random data with a few latent factors, so |W| varies."""
    rng = np.random.default_rng(seed)
    M = M or int(rng.integers(5, 41))
    n = int(rng.integers(M + 5, 3 * M + 30))
    factors = rng.normal(size=(n, 3))
    X = factors @ rng.normal(size=(3, M)) * rng.uniform(0, 1.5, size=M) + rng.normal(size=(n, M))
    return pearson_matrix(Dataset(X, np.zeros(n), [f"f{i}" for i in range(M)]))


class TestBuild:
    def test_single_node(self):
        g = build_feature_graph(CorrelationMatrix(np.zeros((1, 1))))
        assert g.edges() == []
        assert is_connected(g)

    def test_three_feature_trace(self):
        w = corr_from_pairs(3, {(0, 1): 0.9, (1, 2): 0.8, (0, 2): 0.1})
        assert build_feature_graph(w).edges() == [(0, 1), (1, 2)]

    def test_negative_correlations_use_magnitude(self):
        w = corr_from_pairs(3, {(0, 1): -0.9, (1, 2): 0.3, (0, 2): 0.5})
        assert build_feature_graph(w).edges() == [(0, 1), (0, 2)]

    def test_gap_filling_joins_components(self):
        # strongest edges cover all nodes as two disjoint pairs
        w = corr_from_pairs(4, {(0, 1): 0.9, (2, 3): 0.8, (1, 2): 0.2, (0, 3): 0.1})
        g = build_feature_graph(w)
        assert g.edges() == [(0, 1), (1, 2), (2, 3)]
        assert [a[2] for a in g.admission] == [1, 1, 2]

    def test_zero_weight_edges_only_for_connectivity(self):
        w = corr_from_pairs(3, {(0, 1): 0.7})
        g = build_feature_graph(w)
        assert is_connected(g)
        assert (0, 1) in g.edges() and len(g.edges()) == 2
        assert g.admission[-1][2] == 2

    def test_tie_break_smaller_index_first(self):
        w = corr_from_pairs(4, {(2, 3): 0.5, (0, 1): 0.5, (1, 2): 0.5, (0, 3): 0.5})
        g = build_feature_graph(w)
        assert [a[:2] for a in g.admission] == [(0, 1), (0, 3), (1, 2)][:len(g.admission)]

    def test_housing_is_sparser_than_complete(self):
        from conftest import BOSTON
        from shapg.data import load_table

        g = build_feature_graph(pearson_matrix(load_table(BOSTON, "MEDV")))
        assert is_connected(g)
        assert len(g.edges()) < 78

    @pytest.mark.parametrize("seed", range(25))
    def test_matches_replay(self, seed):
        w = random_corr(seed)
        g = build_feature_graph(w)
        edges, log = replay(w.values)
        assert set(g.edges()) == edges
        assert list(g.admission) == log

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31))
    def test_deterministic(self, seed):
        w = random_corr(seed, M=8)
        assert build_feature_graph(w).edges() == build_feature_graph(w).edges()


class TestQueries:
    def test_path_neighborhoods(self):
        g = FeatureGraph.from_edges(3, [(0, 1), (1, 2)])
        assert neighborhood(g, 0, 1) == (1,)
        assert neighborhood(g, 0, 2) == (1, 2)

    def test_neighborhood_bad_node(self):
        g = FeatureGraph.from_edges(2, [(0, 1)])
        with pytest.raises(GraphError):
            neighborhood(g, 5, 1)

    @pytest.mark.parametrize("seed", range(10))
    def test_full_depth_is_bfs_reach(self, seed):
        G = nx.connected_watts_strogatz_graph(10, 3, 0.4, seed=seed)
        g = FeatureGraph.from_edges(10, G.edges())
        for i in range(10):
            reach = nx.single_source_shortest_path_length(G, i)
            assert neighborhood(g, i, 10) == tuple(sorted(v for v in reach if v != i))
            two = nx.single_source_shortest_path_length(G, i, cutoff=2)
            assert neighborhood(g, i, 2) == tuple(sorted(v for v in two if v != i))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 5))
    def test_neighborhood_nested(self, seed, d):
        G = nx.gnp_random_graph(12, 0.2, seed=seed)
        g = FeatureGraph.from_edges(12, G.edges())
        for i in range(12):
            assert set(neighborhood(g, i, d)) <= set(neighborhood(g, i, d + 1))

    def test_connectivity(self):
        assert not is_connected(FeatureGraph.from_edges(2, []))
        assert is_connected(FeatureGraph.from_edges(4, [(0, 1), (1, 2), (2, 3)]))

    def test_induced_sum(self):
        w = corr_from_pairs(3, {(0, 1): 0.5, (1, 2): 0.2, (0, 2): 0.1})
        g = FeatureGraph.from_edges(3, [(0, 1), (1, 2), (0, 2)], w)
        assert induced_edge_weight_sum(w, g, []) == 0
        assert induced_edge_weight_sum(w, g, [2]) == 0
        assert induced_edge_weight_sum(w, g, [0, 1, 2]) == pytest.approx(0.8)

    @pytest.mark.parametrize("seed", range(10))
    def test_induced_sum_brute(self, seed):
        rng = np.random.default_rng(seed)
        W = rng.uniform(-1, 1, size=(8, 8))
        W = np.triu(W, 1) + np.triu(W, 1).T
        A = np.triu(rng.random((8, 8)) < 0.4, 1)
        A = A | A.T
        w, g = CorrelationMatrix(W), FeatureGraph(A)
        s = [v for v in range(8) if rng.random() < 0.5]
        brute = sum(W[j, k] for j in s for k in s if j < k and A[j, k])
        assert induced_edge_weight_sum(w, g, s) == pytest.approx(brute, abs=1e-12)

    def test_induced_sum_out_of_range(self):
        w = CorrelationMatrix(np.zeros((2, 2)))
        with pytest.raises(GraphError):
            induced_edge_weight_sum(w, FeatureGraph.from_edges(2, []), [3])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31))
    def test_induced_sum_monotone_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        W = np.triu(rng.uniform(0, 1, size=(7, 7)), 1)
        W = W + W.T
        w = CorrelationMatrix(W)
        g = build_feature_graph(w)
        t = [v for v in range(7) if rng.random() < 0.7]
        s = [v for v in t if rng.random() < 0.5]
        assert induced_edge_weight_sum(w, g, s) <= induced_edge_weight_sum(w, g, t)


class TestExport:
    def test_single_node_dot(self):
        g = FeatureGraph(np.zeros((1, 1), bool), CorrelationMatrix(np.zeros((1, 1))))
        text = export_dot(g, ["A"])
        assert "  A;" in text
        assert "--" not in text

    def test_edge_label(self):
        w = corr_from_pairs(2, {(0, 1): 0.912})
        text = export_dot(build_feature_graph(w), ["A", "B"])
        assert 'A -- B [label="0.912"]' in text

    def test_name_count_mismatch(self):
        with pytest.raises(GraphError):
            export_dot(FeatureGraph.from_edges(2, []), ["A"])

    @pytest.mark.parametrize("seed", range(5))
    def test_round_trip(self, seed):
        w = random_corr(seed, M=12)
        g = build_feature_graph(w)
        names = [f"n{i}" for i in range(11)] + ['odd "name" x']
        back = parse_dot_edges(export_dot(g, names), names)
        np.testing.assert_array_equal(back.adjacency, g.adjacency)

    def test_adjacency_csv_round_trip(self):
        w = random_corr(3, M=9)
        g = build_feature_graph(w)
        names, back = read_adjacency_csv(g.to_csv([f"f{i}" for i in range(9)]))
        assert names == [f"f{i}" for i in range(9)]
        np.testing.assert_array_equal(back.adjacency, g.adjacency)


def test_is_spanning_tree_on_random_inputs():
    for seed in range(20):
        w = random_corr(100 + seed)
        g = build_feature_graph(w)
        assert len(g.edges()) == w.size - 1
        assert nx.is_tree(nx.Graph(g.edges()))
        assert set(itertools.chain.from_iterable(g.edges())) == set(range(w.size))

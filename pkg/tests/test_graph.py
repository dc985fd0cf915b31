"""Graph storage, splits, stats, sampling, synthesis, and file formats."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gatsy.graph import (
    UNRESOLVED,
    ArtistGraph,
    DatasetSplit,
    FeatureMatrix,
    GenreLabelSet,
    GraphFormatError,
    compute_stats,
    full_neighborhood,
    generate_synthetic,
    graph_restricted_to,
    load_dataset,
    load_features,
    load_graph,
    load_labels,
    neighbor_sample,
    random_features,
    save_dataset,
    save_features,
    save_graph,
    save_labels,
    split_dataset,
)


def quartile_oracle(values, p):
    """Smallest x in values with #(elements <= x) >= p * len(values)."""
    vals = sorted(values)
    for x in vals:
        if sum(1 for v in vals if v <= x) >= p * len(vals):
            return x
    return vals[-1]


def make_graph(n, pairs):
    ids = [f"id{i}" for i in range(n)]
    names = [f"Name {i}" for i in range(n)]
    return ArtistGraph.from_edges(pairs, ids, names)


def random_graph(n, edge_prob, seed):
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < edge_prob
    return make_graph(n, list(zip(iu[keep].tolist(), ju[keep].tolist())))


class TestConstruction:
    def test_single_edge_is_symmetric(self):
        g = make_graph(2, [(0, 1)])
        np.testing.assert_array_equal(g.neighbors(0), [1])
        np.testing.assert_array_equal(g.neighbors(1), [0])

    def test_duplicate_and_reversed_edges_collapse(self):
        g = make_graph(2, [(0, 1), (1, 0), (0, 1)])
        assert g.num_edges == 1

    def test_self_loop_dropped_and_counted(self):
        g = make_graph(3, [(0, 0), (1, 2)])
        assert g.self_loops_dropped == 1
        assert g.num_edges == 1
        assert g.neighbors(0).size == 0

    def test_neighbor_lists_sorted(self):
        g = make_graph(5, [(3, 1), (3, 4), (3, 0), (3, 2)])
        np.testing.assert_array_equal(g.neighbors(3), [0, 1, 2, 4])

    def test_out_of_range_endpoint(self):
        with pytest.raises(GraphFormatError):
            make_graph(2, [(0, 5)])

    def test_index_of(self):
        g = make_graph(3, [(0, 1)])
        assert g.index_of("id2") == 2


class TestLoadSave:
    def _write(self, tmp_path, ids_text, edges_text):
        ids = tmp_path / "ids.tsv"
        edges = tmp_path / "edges.tsv"
        ids.write_text(ids_text)
        edges.write_text(edges_text)
        return str(edges), str(ids)

    def test_load_basic(self, tmp_path):
        edges, ids = self._write(
            tmp_path, "a\tArtist A\nb\tArtist B\nc\tArtist C\n",
            "a\tb\nb\tc\n")
        g = load_graph(edges, ids)
        assert g.n == 3 and g.num_edges == 2
        assert g.names == ("Artist A", "Artist B", "Artist C")
        np.testing.assert_array_equal(g.neighbors(1), [0, 2])

    def test_unknown_id_reports_line(self, tmp_path):
        edges, ids = self._write(tmp_path, "a\tA\nb\tB\n", "a\tb\na\tzz\n")
        with pytest.raises(GraphFormatError, match=r"edges\.tsv:2.*'zz'"):
            load_graph(edges, ids)

    def test_malformed_line_reports_line(self, tmp_path):
        edges, ids = self._write(tmp_path, "a\tA\nb\tB\n", "a\tb\na b\n")
        with pytest.raises(GraphFormatError, match=r"edges\.tsv:2"):
            load_graph(edges, ids)

    def test_duplicate_id_rejected(self, tmp_path):
        edges, ids = self._write(tmp_path, "a\tA\na\tA2\n", "")
        with pytest.raises(GraphFormatError, match=r"ids\.tsv:2.*duplicate"):
            load_graph(edges, ids)

    def test_round_trip_identity(self, tmp_path):
        g = random_graph(40, 0.15, seed=3)
        save_graph(g, str(tmp_path / "e.tsv"), str(tmp_path / "i.tsv"))
        g2 = load_graph(str(tmp_path / "e.tsv"), str(tmp_path / "i.tsv"))
        np.testing.assert_array_equal(g.indptr, g2.indptr)
        np.testing.assert_array_equal(g.indices, g2.indices)
        assert g.artist_ids == g2.artist_ids and g.names == g2.names


class TestStats:
    def test_path_graph_hand_count(self):
        g = make_graph(3, [(0, 1), (1, 2)])
        s = compute_stats(g)
        assert s.total_connections == 2
        assert s.directed_connections == 4
        assert s.avg_connections_per_artist == pytest.approx(4 / 3)
        np.testing.assert_array_equal(sorted(g.degrees()), [1, 1, 2])
        assert (s.q1, s.q2, s.q3) == (1, 1, 2)

    def test_quartiles_match_brute_force_oracle(self):
        g = random_graph(60, 0.1, seed=9)
        s = compute_stats(g)
        deg = g.degrees().tolist()
        assert s.q1 == quartile_oracle(deg, 0.25)
        assert s.q2 == quartile_oracle(deg, 0.50)
        assert s.q3 == quartile_oracle(deg, 0.75)

    def test_empty_graph_rejected(self):
        with pytest.raises(GraphFormatError):
            compute_stats(make_graph(0, []))

    def test_disjoint_union_merges_degree_multisets(self):
        a = random_graph(20, 0.2, seed=1)
        b = random_graph(30, 0.1, seed=2)
        shifted = [(i + a.n, j + a.n) for i, j in
                   ((i, j) for i in range(b.n) for j in b.neighbors(i)
                    if i < j)]
        own = [(i, int(j)) for i in range(a.n) for j in a.neighbors(i) if i < j]
        union = make_graph(a.n + b.n, own + shifted)
        merged = sorted(a.degrees().tolist() + b.degrees().tolist())
        assert sorted(union.degrees().tolist()) == merged
        s = compute_stats(union)
        assert s.total_connections == a.num_edges + b.num_edges
        assert s.q2 == quartile_oracle(merged, 0.50)


class TestSplit:
    def test_exact_tenths(self):
        g = random_graph(100, 0.05, seed=4)
        s = split_dataset(g, seed=0)
        assert (len(s.train), len(s.validation), len(s.test)) == (80, 10, 10)

    def test_uneven_floor_rule(self):
        g = random_graph(95, 0.05, seed=4)
        s = split_dataset(g, seed=1)
        assert (len(s.train), len(s.validation), len(s.test)) == (77, 9, 9)

    def test_partition_properties(self):
        g = random_graph(53, 0.1, seed=5)
        s = split_dataset(g, seed=7)
        all_nodes = np.concatenate([s.train, s.validation, s.test])
        assert np.unique(all_nodes).size == g.n

    def test_deterministic_per_seed(self):
        g = random_graph(50, 0.1, seed=6)
        a, b = split_dataset(g, seed=3), split_dataset(g, seed=3)
        np.testing.assert_array_equal(a.train, b.train)
        np.testing.assert_array_equal(a.test, b.test)

    def test_too_small_rejected(self):
        with pytest.raises(GraphFormatError):
            split_dataset(make_graph(9, [(0, 1)]), seed=0)


class TestRestriction:
    def test_identity_when_all_allowed(self):
        g = random_graph(25, 0.2, seed=7)
        sub, old_of_new = graph_restricted_to(g, np.arange(g.n))
        np.testing.assert_array_equal(old_of_new, np.arange(g.n))
        np.testing.assert_array_equal(sub.indptr, g.indptr)
        np.testing.assert_array_equal(sub.indices, g.indices)

    def test_path_endpoints_become_edgeless(self):
        g = make_graph(3, [(0, 1), (1, 2)])
        sub, old_of_new = graph_restricted_to(g, [0, 2])
        assert sub.n == 2 and sub.num_edges == 0
        np.testing.assert_array_equal(old_of_new, [0, 2])

    def test_subgraph_edges_match_original(self):
        g = random_graph(30, 0.2, seed=8)
        keep = np.arange(0, 30, 2)
        sub, old_of_new = graph_restricted_to(g, keep)
        for new_i in range(sub.n):
            for new_j in sub.neighbors(new_i):
                assert old_of_new[new_j] in g.neighbors(old_of_new[new_i])
        # and no induced edge is missing
        expected = sum(1 for i in keep for j in g.neighbors(i)
                       if j in set(keep.tolist()) and i < j)
        assert sub.num_edges == expected


class TestNeighborSample:
    def test_fanout_at_least_degree_keeps_all(self):
        g = make_graph(5, [(0, 1), (0, 2), (0, 3), (0, 4)])
        ns = neighbor_sample(g, [0], fanouts=[10], seed=0)
        layer = ns.layers[0]
        np.testing.assert_array_equal(
            layer.input_nodes[layer.src_index], [1, 2, 3, 4])

    def test_fanout_one_picks_single_true_neighbor(self):
        g = make_graph(6, [(0, 1), (0, 2), (0, 3), (0, 4), (0, 5)])
        ns = neighbor_sample(g, [0], fanouts=[1], seed=42)
        layer = ns.layers[0]
        assert layer.dst_indptr.tolist() == [0, 1]
        picked = layer.input_nodes[layer.src_index[0]]
        assert picked in g.neighbors(0)

    def test_same_seed_same_sample(self):
        g = random_graph(40, 0.2, seed=9)
        a = neighbor_sample(g, [3, 7, 11], [2, 3], seed=5)
        b = neighbor_sample(g, [3, 7, 11], [2, 3], seed=5)
        for la, lb in zip(a.layers, b.layers):
            np.testing.assert_array_equal(la.input_nodes, lb.input_nodes)
            np.testing.assert_array_equal(la.src_index, lb.src_index)
            np.testing.assert_array_equal(la.dst_indptr, lb.dst_indptr)

    def test_layer_chaining(self):
        g = random_graph(40, 0.2, seed=10)
        batch = np.array([0, 5, 9])
        ns = neighbor_sample(g, batch, [3, 2], seed=1)
        assert len(ns.layers) == 2
        first, last = ns.layers
        np.testing.assert_array_equal(
            last.input_nodes[:last.n_out], batch)
        np.testing.assert_array_equal(
            first.input_nodes[:first.n_out], last.input_nodes)
        assert ns.input_nodes is first.input_nodes

    def test_isolated_node_gets_self_edge(self):
        g = make_graph(2, [])
        ns = neighbor_sample(g, [0], fanouts=[4], seed=0)
        layer = ns.layers[0]
        assert layer.input_nodes[layer.src_index[0]] == 0

    def test_duplicate_batch_rejected(self):
        g = make_graph(3, [(0, 1)])
        with pytest.raises(GraphFormatError):
            neighbor_sample(g, [0, 0], fanouts=[2], seed=0)

    def test_full_neighborhood_keeps_everything(self):
        g = random_graph(20, 0.3, seed=11)
        ns = full_neighborhood(g, np.arange(g.n), num_layers=2)
        for layer in ns.layers:
            for k in range(layer.n_out):
                node = int(layer.input_nodes[k])
                edge_srcs = layer.input_nodes[
                    layer.src_index[layer.dst_indptr[k]:layer.dst_indptr[k + 1]]]
                np.testing.assert_array_equal(edge_srcs, g.neighbors(node))

    @given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 6))
    @settings(max_examples=30, deadline=None)
    def test_sampled_neighbors_are_true_neighbors(self, seed, layers, fanout):
        g = random_graph(30, 0.15, seed=12)
        rng = np.random.default_rng(seed)
        batch = rng.choice(g.n, size=5, replace=False)
        ns = neighbor_sample(g, batch, [fanout] * layers, seed=seed)
        for layer in ns.layers:
            for k in range(layer.n_out):
                dst = int(layer.input_nodes[k])
                lo, hi = layer.dst_indptr[k], layer.dst_indptr[k + 1]
                assert hi - lo <= max(fanout, 1)
                for s in layer.src_index[lo:hi]:
                    src = int(layer.input_nodes[s])
                    assert src in g.neighbors(dst) or (
                        src == dst and g.neighbors(dst).size == 0)


class TestSynthetic:
    def test_disjoint_cliques_at_degenerate_probabilities(self):
        g, feats, labels = generate_synthetic(
            blocks=3, nodes_per_block=4, p_in=1.0, p_out=0.0, m=5, seed=0)
        assert g.n == 12
        assert g.num_edges == 3 * (4 * 3 // 2)
        for i in range(g.n):
            assert np.all(labels.labels[g.neighbors(i)] == labels.labels[i])

    def test_labels_constant_per_block(self):
        g, feats, labels = generate_synthetic(
            blocks=4, nodes_per_block=25, p_in=0.3, p_out=0.02, m=8, seed=1)
        assert labels.num_classes == 4
        assert np.all(labels.labels >= 0)

    def test_within_block_edge_fraction_binomial_bound(self):
        blocks, npb, p_in = 4, 100, 0.1
        g, feats, labels = generate_synthetic(
            blocks=blocks, nodes_per_block=npb, p_in=p_in, p_out=0.005,
            m=6, seed=2)
        assert g.n == blocks * npb  # no pruning at these densities
        within = sum(
            1 for i in range(g.n) for j in g.neighbors(i)
            if i < j and labels.labels[i] == labels.labels[j])
        n_pairs = blocks * (npb * (npb - 1) // 2)
        sigma = math.sqrt(p_in * (1 - p_in) / n_pairs)
        assert abs(within / n_pairs - p_in) <= 3 * sigma

    def test_no_isolated_nodes_after_pruning(self):
        g, feats, labels = generate_synthetic(
            blocks=2, nodes_per_block=30, p_in=0.08, p_out=0.0, m=4, seed=3)
        assert np.all(g.degrees() > 0)
        assert feats.n == g.n and labels.labels.size == g.n

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            generate_synthetic(2, 10, p_in=0.1, p_out=0.5, m=3, seed=0)
        with pytest.raises(ValueError):
            generate_synthetic(2, 10, p_in=0.0, p_out=0.0, m=3, seed=0)

    def test_deterministic_per_seed(self):
        a = generate_synthetic(2, 20, 0.2, 0.01, 5, seed=9)
        b = generate_synthetic(2, 20, 0.2, 0.01, 5, seed=9)
        np.testing.assert_array_equal(a[0].indices, b[0].indices)
        np.testing.assert_array_equal(a[1].data, b[1].data)


class TestRandomFeatures:
    def test_shape_and_kind(self):
        fm = random_features(7, 3, seed=0)
        assert fm.data.shape == (7, 3) and fm.kind == "random"

    def test_deterministic(self):
        np.testing.assert_array_equal(
            random_features(5, 4, seed=2).data,
            random_features(5, 4, seed=2).data)

    def test_sample_mean_clt_bound(self):
        fm = random_features(200, 50, seed=3)
        assert abs(fm.data.mean()) < 4 / math.sqrt(200 * 50)


class TestFeatureFiles:
    def test_text_round_trip(self, tmp_path):
        fm = FeatureMatrix(np.random.default_rng(0).normal(size=(6, 4)))
        path = str(tmp_path / "f.txt")
        save_features(path, fm, binary=False)
        back = load_features(path)
        np.testing.assert_array_equal(back.data, fm.data)

    def test_binary_round_trip(self, tmp_path):
        fm = FeatureMatrix(np.random.default_rng(1).normal(size=(5, 7)))
        path = str(tmp_path / "f.bin")
        save_features(path, fm, binary=True)
        back = load_features(path)
        np.testing.assert_array_equal(back.data, fm.data)

    def test_binary_header_layout(self, tmp_path):
        fm = FeatureMatrix(np.zeros((2, 3)))
        path = str(tmp_path / "f.bin")
        save_features(path, fm, binary=True)
        raw = open(path, "rb").read()
        assert raw[:8] == b"GTSYFEAT"
        assert np.frombuffer(raw[8:16], dtype="<u4").tolist() == [2, 3]
        assert len(raw) == 16 + 2 * 3 * 8

    def test_truncated_binary_rejected(self, tmp_path):
        fm = FeatureMatrix(np.ones((3, 3)))
        path = str(tmp_path / "f.bin")
        save_features(path, fm, binary=True)
        raw = open(path, "rb").read()
        open(path, "wb").write(raw[:-5])
        with pytest.raises(GraphFormatError, match="truncated"):
            load_features(path)

    def test_bad_text_header(self, tmp_path):
        path = str(tmp_path / "f.txt")
        open(path, "w").write("not a header\n")
        with pytest.raises(GraphFormatError, match="header"):
            load_features(path)

    def test_wrong_column_count_reports_line(self, tmp_path):
        path = str(tmp_path / "f.txt")
        open(path, "w").write("2 3\n1 2 3\n1 2\n")
        with pytest.raises(GraphFormatError, match=r"f\.txt:3"):
            load_features(path)

    def test_non_finite_rejected(self):
        with pytest.raises(GraphFormatError):
            FeatureMatrix(np.array([[1.0, np.inf]]))


class TestLabelFiles:
    def test_round_trip_preserves_genres(self, tmp_path):
        g = make_graph(4, [(0, 1), (2, 3)])
        labels = GenreLabelSet(("rock", "jazz", "pop"),
                               np.array([2, 0, 0, 1]))
        path = str(tmp_path / "labels.tsv")
        save_labels(path, g, labels)
        back = load_labels(path, g)
        for i in range(g.n):
            assert back.genre_of(i) == labels.genre_of(i)

    def test_vocabulary_is_sorted_unique(self, tmp_path):
        g = make_graph(3, [(0, 1)])
        path = str(tmp_path / "labels.tsv")
        open(path, "w").write("id0\tpop\nid1\trock\nid2\tpop\n")
        back = load_labels(path, g)
        assert back.vocabulary == ("pop", "rock")

    def test_unresolved_cannot_be_saved(self, tmp_path):
        g = make_graph(2, [(0, 1)])
        labels = GenreLabelSet(("rock",), np.array([0, UNRESOLVED]))
        with pytest.raises(GraphFormatError, match="unresolved"):
            save_labels(str(tmp_path / "l.tsv"), g, labels)

    def test_unknown_id_rejected(self, tmp_path):
        g = make_graph(2, [(0, 1)])
        path = str(tmp_path / "l.tsv")
        open(path, "w").write("id0\trock\nmystery\tpop\n")
        with pytest.raises(GraphFormatError, match=r"l\.tsv:2"):
            load_labels(path, g)


class TestDatasetDirectory:
    def test_round_trip_with_labels(self, tmp_path):
        g, feats, labels = generate_synthetic(2, 15, 0.3, 0.02, 6, seed=4)
        save_dataset(str(tmp_path), g, feats, labels)
        g2, feats2, labels2 = load_dataset(str(tmp_path))
        assert g2.artist_ids == g.artist_ids
        np.testing.assert_array_equal(g2.indices, g.indices)
        np.testing.assert_array_equal(feats2.data, feats.data)
        for i in range(g.n):
            assert labels2.genre_of(i) == labels.genre_of(i)

    def test_round_trip_without_labels(self, tmp_path):
        g, feats, _ = generate_synthetic(2, 12, 0.3, 0.02, 4, seed=5)
        save_dataset(str(tmp_path), g, feats, labels=None,
                     binary_features=False)
        g2, feats2, labels2 = load_dataset(str(tmp_path))
        assert labels2 is None
        np.testing.assert_array_equal(feats2.data, feats.data)

    def test_feature_row_mismatch_rejected(self, tmp_path):
        g, feats, _ = generate_synthetic(2, 10, 0.3, 0.02, 4, seed=6)
        save_dataset(str(tmp_path), g, feats)
        save_features(str(tmp_path / "features.bin"),
                      FeatureMatrix(np.zeros((3, 4))), binary=True)
        with pytest.raises(GraphFormatError, match="feature rows"):
            load_dataset(str(tmp_path))

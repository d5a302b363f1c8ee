import numpy as np
import pytest

from gnngen.graphs import (
    FormatError,
    Graph,
    edge_homophily,
    generate_sbm,
    load_graph,
    normalize,
)
from gnngen.sparse import SparseAdjacency


def write_tiny_dataset(tmp_path, masks="tvs-"):
    (tmp_path / "x.txt").write_text("4 2\n1 0\n0 1\n1 1\n0 0\n")
    (tmp_path / "e.txt").write_text("3\n0 1\n1 2\n2 3\n")
    (tmp_path / "y.txt").write_text("0\n1\n0\n1\n")
    (tmp_path / "m.txt").write_text("\n".join(masks) + "\n")
    return tuple(tmp_path / name for name in ("x.txt", "e.txt", "y.txt", "m.txt"))


def test_load_graph_roundtrip(tmp_path):
    paths = write_tiny_dataset(tmp_path)
    g = load_graph(*paths, row_normalize=False)
    assert g.n == 4 and g.d_f == 2 and g.d_c == 2
    np.testing.assert_array_equal(g.labels, [0, 1, 0, 1])
    assert g.train_mask.tolist() == [True, False, False, False]
    assert g.val_mask.tolist() == [False, True, False, False]
    assert g.test_mask.tolist() == [False, False, True, False]
    dense = g.adjacency.to_dense()
    np.testing.assert_allclose(dense, dense.T)
    assert dense[0, 1] == 1 and dense[2, 3] == 1 and dense[0, 2] == 0


def test_load_graph_row_normalization(tmp_path):
    paths = write_tiny_dataset(tmp_path)
    g = load_graph(*paths, row_normalize=True)
    sums = g.features.sum(axis=1)
    nonzero = sums != 0
    np.testing.assert_allclose(g.features[nonzero].sum(axis=1), 1.0)
    np.testing.assert_allclose(g.features[3], 0.0)  # all-zero row untouched


def test_load_graph_count_mismatch_reported(tmp_path):
    paths = write_tiny_dataset(tmp_path)
    paths[2].write_text("0\n1\n0\n")  # one label short
    with pytest.raises(FormatError, match="label"):
        load_graph(*paths)


def test_load_graph_bad_mask_char(tmp_path):
    paths = write_tiny_dataset(tmp_path, masks="tvsx")
    with pytest.raises(FormatError):
        load_graph(*paths)


def test_masks_must_be_disjoint():
    adj = SparseAdjacency.from_edges(2, [[0, 1]])
    mask = np.array([True, False])
    with pytest.raises(FormatError):
        Graph(2, np.zeros((2, 1)), adj, np.zeros(2, dtype=int), mask, mask, ~mask)


def test_normalize_matches_dense_oracle():
    adj = SparseAdjacency.from_edges(4, [[0, 1], [1, 2], [2, 3], [0, 3]])
    a = adj.to_dense() + np.eye(4)
    d = np.diag(1.0 / np.sqrt(a.sum(axis=1)))
    np.testing.assert_allclose(normalize(adj).base.to_dense(), d @ a @ d, atol=1e-12)


def test_sbm_shapes_masks_and_determinism():
    g1 = generate_sbm(100, 3, 0.2, 0.02, 6, seed=9)
    g2 = generate_sbm(100, 3, 0.2, 0.02, 6, seed=9)
    assert g1.n == 100 and g1.d_f == 6 and g1.d_c == 3
    assert g1.train_mask.sum() == 60 and g1.val_mask.sum() == 20 and g1.test_mask.sum() == 20
    assert not (g1.train_mask & g1.val_mask).any()
    np.testing.assert_array_equal(g1.features, g2.features)
    np.testing.assert_array_equal(g1.adjacency.col_indices, g2.adjacency.col_indices)


def test_sbm_homophily_tracks_block_probabilities():
    g = generate_sbm(400, 2, 0.1, 0.01, 4, seed=1)
    # Expected fraction of same-class edges = p_in / (p_in + p_out) for equal
    # blocks (within-class and cross-class pair counts are both ~n^2/4).
    h = edge_homophily(g)
    assert 0.85 < h < 0.95
    g_het = generate_sbm(400, 2, 0.01, 0.1, 4, seed=1)
    assert edge_homophily(g_het) < 0.15


def test_sbm_degenerate_sizes_rejected():
    with pytest.raises(ValueError):
        generate_sbm(2, 3, 0.1, 0.1, 4, seed=0)
    with pytest.raises(ValueError):
        generate_sbm(10, 2, 1.5, 0.1, 4, seed=0)


def test_edge_homophily_empty_graph():
    adj = SparseAdjacency.from_edges(3, np.zeros((0, 2)))
    g = Graph(
        3,
        np.zeros((3, 1)),
        adj,
        np.zeros(3, dtype=int),
        np.array([1, 0, 0], dtype=bool),
        np.array([0, 1, 0], dtype=bool),
        np.array([0, 0, 1], dtype=bool),
    )
    assert edge_homophily(g) == 0.0

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from conftest import check_gradient
from relembed.app import config
from relembed.app.errors import DataError, UnknownValueError
from relembed.app.services.autodiff import DiffTensor, sum_
from relembed.app.services.relations import (
    NeighborOptions,
    NeighborRelation,
    PairwiseEqualityRelation,
    RelationMatrix,
    batch_pdist,
    knn_relations,
    pairwise_dist,
    pairwise_equality,
    subset_for_batch,
)


def test_pairwise_distances_match_cdist(rng):
    data = rng.normal(size=(12, 4))
    rel = pairwise_dist(data)
    np.testing.assert_allclose(rel.values, cdist(data, data))
    assert rel.symmetric and np.all(np.diag(rel.values) == 0)
    manhattan = pairwise_dist(data, "manhattan")
    np.testing.assert_allclose(manhattan.values, cdist(data, data, "cityblock"))


def test_unknown_metric():
    with pytest.raises(UnknownValueError):
        pairwise_dist(np.zeros((3, 2)), "geodesic")


def test_non_finite_input_rejected():
    data = np.array([[0.0, 1.0], [np.nan, 2.0], [1.0, 1.0]])
    with pytest.raises(DataError):
        pairwise_dist(data)


def test_knn_on_a_line():
    data = np.arange(6.0).reshape(-1, 1)
    rel = knn_relations(data, 2)
    assert rel.is_sparse and rel.nnz == 12
    row = rel.values[0].toarray().ravel()
    np.testing.assert_allclose(row, [0, 1, 2, 0, 0, 0])
    np.testing.assert_allclose(rel.values[3].toarray().ravel(), [0, 0, 1, 0, 1, 0])


def test_knn_ties_go_to_lower_index():
    data = np.array([[0.0], [1.0], [-1.0], [5.0]])
    rel = knn_relations(data, 1)
    assert rel.values[0].indices.tolist() == [1]


def test_knn_with_all_neighbors_equals_pairwise(rng):
    data = rng.normal(size=(9, 3))
    dense = pairwise_dist(data).values
    knn = knn_relations(data, 8).to_dense()
    np.testing.assert_array_equal(knn, dense)


def test_knn_needs_k_below_n():
    with pytest.raises(DataError):
        knn_relations(np.zeros((4, 2)), 4)


def test_ball_tree_path_matches_exact(rng, monkeypatch):
    data = rng.normal(size=(40, 3))
    exact = knn_relations(data, 5)
    monkeypatch.setattr(config, "KNN_TREE_THRESHOLD", 10)
    tree = knn_relations(data, 5)
    np.testing.assert_allclose(tree.to_dense(), exact.to_dense(), atol=1e-12)


def test_neighbor_relation_default_k(rng):
    data = rng.normal(size=(30, 2))
    rel = NeighborRelation().compute_global(data, NeighborOptions(), default_k=7)
    assert rel.nnz == 30 * 7
    assert NeighborRelation().compute_global(data, NeighborOptions(n_neighbors=3)).nnz == 90
    assert NeighborRelation().compute_global(data[:5], NeighborOptions()).nnz == 5 * 4


def test_pairwise_equality():
    rel = pairwise_equality(np.array([0, 1, 0]))
    np.testing.assert_array_equal(rel.values, [[0, 0, 1], [0, 0, 0], [1, 0, 0]])
    assert PairwiseEqualityRelation.default_data == "labels"
    with pytest.raises(DataError):
        PairwiseEqualityRelation().compute_global(np.zeros((3, 2)), None)


def test_subset_for_batch_renormalizes():
    values = np.array([[0, 1, 2, 0], [1, 0, 0, 3], [2, 0, 0, 1], [0, 3, 1, 0]], dtype=float)
    rel = RelationMatrix(values / values.sum(), symmetric=True, normalized=True, scale=4.0)
    block, degenerate = subset_for_batch(rel, [0, 1, 3])
    assert not degenerate
    assert block.sum() == pytest.approx(4.0)
    np.testing.assert_allclose(block / block.sum(), np.array([[0, 1, 0], [1, 0, 3], [0, 3, 0]]) / 8.0)


def test_subset_for_batch_flags_empty_block():
    values = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]], dtype=float)
    rel = RelationMatrix(values, normalized=True)
    block, degenerate = subset_for_batch(rel, [0, 2])
    assert degenerate and block.sum() == 0


def test_subset_for_batch_sparse_matches_dense(rng):
    data = rng.normal(size=(15, 3))
    rel = knn_relations(data, 4)
    idx = np.array([0, 3, 4, 9, 14])
    sparse_block, _ = subset_for_batch(rel, idx)
    dense_block, _ = subset_for_batch(RelationMatrix(rel.to_dense()), idx)
    np.testing.assert_array_equal(sparse_block, dense_block)


def test_subset_rejects_bad_indices():
    rel = RelationMatrix(np.zeros((3, 3)))
    with pytest.raises(DataError):
        subset_for_batch(rel, [0, 0])
    with pytest.raises(DataError):
        subset_for_batch(rel, [0, 3])


def test_batch_pdist_values_and_gradient(rng):
    out = rng.normal(size=(5, 2))
    rel = batch_pdist(DiffTensor(out))
    np.testing.assert_allclose(rel.values.values, cdist(out, out), atol=1e-5)
    weights = rng.uniform(size=(5, 5))
    check_gradient(lambda t: sum_(batch_pdist(t).values * weights), out)
    check_gradient(lambda t: sum_(batch_pdist(t, "sqeuclidean").values * weights), out)
    check_gradient(lambda t: sum_(batch_pdist(t, "cosine").values * weights), out)


def test_batch_pdist_per_edge(rng):
    out = rng.normal(size=(4, 3))
    heads, tails = np.array([0, 1, 3]), np.array([2, 0, 1])
    rel = batch_pdist(DiffTensor(out), edges=(heads, tails))
    assert rel.per_edge
    np.testing.assert_allclose(rel.values.values, np.linalg.norm(out[heads] - out[tails], axis=1), atol=1e-6)


def test_relation_csv_export(tmp_path):
    rel = knn_relations(np.arange(4.0).reshape(-1, 1), 1)
    path = tmp_path / "rel.csv"
    rel.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "row,col,value"
    assert len(lines) == 1 + rel.nnz

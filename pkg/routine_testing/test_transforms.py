import numpy as np
import pytest

from conftest import check_gradient
from relembed.app.errors import CalibrationError, DataError
from relembed.app.routine import compile_routine
from relembed.app.services.autodiff import DiffTensor, sum_
from relembed.app.services.models import FullyConnectedModel
from relembed.app.services.relations import RelationMatrix, batch_pdist, knn_relations, pairwise_dist
from relembed.app.services.transforms import (
    CauchyOptions,
    CauchyTransform,
    MultiplyOptions,
    MultiplyTransform,
    NormalizeTransform,
    StudentTOptions,
    StudentTTransform,
    cauchy_kernel,
    connectivity_calibrate,
    fit_cauchy_params,
    normalize,
    perplexity_calibrate,
    rescale,
    student_t_kernel,
    symmetrize,
)
from relembed.app.spec import parse_spec


def _row_perplexity(probs: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, probs * np.log2(probs), 0.0)
    return 2.0 ** (-terms.sum(axis=1))


@pytest.mark.parametrize("perplexity", [5.0, 12.5, 30.0])
def test_perplexity_dense_rows_hit_target(rng, perplexity):
    data = rng.normal(size=(60, 4))
    result = perplexity_calibrate(pairwise_dist(data), perplexity)
    probs = result.probabilities.values
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(np.diag(probs) == 0)
    np.testing.assert_allclose(_row_perplexity(probs), perplexity, atol=1.5e-4)
    assert result.bandwidths.shape == (60,) and np.all(result.bandwidths > 0)


def test_perplexity_on_neighbor_rows(rng):
    data = rng.normal(size=(80, 3))
    result = perplexity_calibrate(knn_relations(data, 20), 6.0)
    probs = result.probabilities
    assert probs.is_sparse and probs.nnz == 80 * 20
    dense = probs.to_dense()
    np.testing.assert_allclose(dense.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(_row_perplexity(dense), 6.0, atol=1.5e-4)


def test_perplexity_above_neighbor_count():
    data = np.arange(10.0).reshape(-1, 1)
    with pytest.raises(CalibrationError):
        perplexity_calibrate(knn_relations(data, 3), 5.0)


def test_nearer_neighbors_get_more_probability():
    data = np.array([[0.0], [1.0], [3.0], [7.0]])
    probs = perplexity_calibrate(pairwise_dist(data), 2.0).probabilities.values
    assert probs[0, 1] > probs[0, 2] > probs[0, 3]


def test_connectivity_rows_sum_to_log_k(rng):
    data = rng.normal(size=(70, 5))
    result = connectivity_calibrate(knn_relations(data, 10))
    dense = result.probabilities.to_dense()
    np.testing.assert_allclose(dense.sum(axis=1), np.log2(10), atol=1e-4)
    # Nearest neighbor always gets membership 1
    assert np.allclose(dense.max(axis=1), 1.0)
    rho = result.bandwidths[:, 0]
    nearest = knn_relations(data, 1).to_dense().max(axis=1)
    np.testing.assert_allclose(rho, nearest)


def test_connectivity_explicit_target(rng):
    data = rng.normal(size=(40, 2))
    dense = connectivity_calibrate(knn_relations(data, 12), n_neighbors=6).probabilities.to_dense()
    np.testing.assert_allclose(dense.sum(axis=1), np.log2(6), atol=1e-4)


def test_symmetrize_mean_and_sub_prod():
    values = np.array([[0.0, 0.2, 0.6], [0.4, 0.0, 0.0], [0.6, 0.5, 0.0]])
    rel = RelationMatrix(values)
    mean = symmetrize(rel).values
    np.testing.assert_allclose(mean, (values + values.T) / 2)
    fuzzy = symmetrize(rel, "sub_prod").values
    np.testing.assert_allclose(fuzzy[0, 1], 0.2 + 0.4 - 0.08)
    np.testing.assert_allclose(fuzzy, fuzzy.T)
    assert symmetrize(rel).symmetric


def test_sparse_symmetrize_matches_dense(rng):
    rel = knn_relations(rng.normal(size=(20, 3)), 4)
    for mode in ("mean", "sub_prod"):
        sparse_out = symmetrize(rel, mode).to_dense()
        dense_out = symmetrize(RelationMatrix(rel.to_dense()), mode).values
        np.testing.assert_allclose(sparse_out, dense_out)


def test_normalize_drops_diagonal():
    values = np.array([[5.0, 1.0], [3.0, 7.0]])
    rel = normalize(RelationMatrix(values))
    np.testing.assert_allclose(rel.values, [[0.0, 0.25], [0.75, 0.0]])
    assert rel.normalized and rel.scale == 1.0
    with pytest.raises(DataError):
        normalize(RelationMatrix(np.eye(3)))


def test_sparse_normalize(rng):
    rel = normalize(knn_relations(rng.normal(size=(15, 2)), 3))
    assert rel.is_sparse
    assert rel.values.sum() == pytest.approx(1.0)


def test_multiply_tracks_scale():
    rel = normalize(RelationMatrix(np.ones((3, 3))))
    scaled = MultiplyTransform().apply_global(rel, MultiplyOptions(factor=12.0))
    assert scaled.scale == 12.0 and scaled.normalized
    assert scaled.values.sum() == pytest.approx(12.0)
    assert rescale(scaled, 0.5).scale == 6.0


def test_student_t_values():
    dists = batch_pdist(DiffTensor(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])))
    q = student_t_kernel(dists).values.values
    assert q[0, 1] == pytest.approx(0.5, abs=1e-9)
    assert q[0, 2] == pytest.approx(0.2, abs=1e-9)
    assert np.all(np.diag(q) == 0)
    heavy = student_t_kernel(dists, alpha=0.5).values.values
    assert heavy[0, 1] == pytest.approx((1.0 + 2.0) ** -0.75, abs=1e-9)


def test_kernel_gradients(rng):
    out = rng.normal(size=(5, 2))
    weights = rng.uniform(size=(5, 5))
    check_gradient(lambda t: sum_(student_t_kernel(batch_pdist(t)).values * weights), out)
    check_gradient(lambda t: sum_(cauchy_kernel(batch_pdist(t), a=1.6, b=0.9).values * weights), out)


def test_cauchy_fit_default_parameters():
    a, b = fit_cauchy_params(1.0, 0.1)
    assert a == pytest.approx(1.577, rel=2e-2)
    assert b == pytest.approx(0.895, rel=2e-2)


def test_cauchy_with_fixed_parameters():
    dists = batch_pdist(DiffTensor(np.array([[0.0], [1.0]])))
    q = CauchyTransform().apply_batch(dists, CauchyOptions(a=2.0, b=1.0)).values.values
    assert q[0, 1] == pytest.approx(1.0 / 3.0, abs=1e-9)


def test_global_kernel_keeps_sparsity(rng):
    rel = knn_relations(rng.normal(size=(12, 2)), 3)
    out = StudentTTransform().apply_global(rel, StudentTOptions())
    assert out.is_sparse and out.nnz == rel.nnz
    np.testing.assert_allclose(out.values.data, 1.0 / (1.0 + rel.values.data ** 2))


def test_batch_normalize_sums_to_one(rng):
    dists = batch_pdist(DiffTensor(rng.normal(size=(6, 2))))
    q = NormalizeTransform().apply_batch(student_t_kernel(dists), None).values
    assert q.values.sum() == pytest.approx(1.0)


def _kernel_row(kernel):
    # Item 0 against a duplicate of itself, then items at growing distances
    points = np.concatenate([[0.0, 0.0], np.linspace(0.05, 25.0, 60)]).reshape(-1, 1)
    return kernel(batch_pdist(DiffTensor(points))).values.values[0, 1:]


@pytest.mark.parametrize("kernel", [
    lambda d: student_t_kernel(d),
    lambda d: student_t_kernel(d, alpha=0.5),
    lambda d: cauchy_kernel(d, spread=1.0, min_dist=0.1),
    lambda d: cauchy_kernel(d, a=1.0, b=1.0),
])
def test_kernels_decrease_and_stay_in_unit_interval(kernel):
    row = _kernel_row(kernel)
    assert row[0] == pytest.approx(1.0)
    assert np.all(np.diff(row) <= 0)
    assert np.all(row > 0) and np.all(row <= 1.0)


CHAINS = """
relations:
  - name: p
    level: global
    type: neighbor
    options:
      n_neighbors: 10
    transforms:
      - type: connect
        options:
          neighbors: 10
      - type: symmetrize
        options:
          sub prod: true
      - type: normalize
  - name: late
    level: global
    type: pairwise
    transforms:
      - type: normalize
      - type: multiply
        options:
          factor: 3
  - name: early
    level: global
    type: pairwise
    transforms:
      - type: multiply
        options:
          factor: 3
      - type: normalize
  - name: q
    level: batch
    type: pairwise
losses:
  - name: mds
    type: relation
    func: mse
    keys:
      rels: [late, q]
training phases:
  - epochs: 1
    loss:
      components: mds
"""


def test_transform_chain_runs_in_listed_order(three_blobs):
    model = FullyConnectedModel(5, [], {"embed": 2}, seed=0)
    routine = compile_routine(parse_spec(CHAINS), model, three_blobs)
    data = three_blobs["main"]

    manual = knn_relations(data, 10)
    manual = connectivity_calibrate(manual, 10).probabilities
    manual = normalize(symmetrize(manual, "sub_prod"))
    np.testing.assert_allclose(routine.global_relation("p").to_dense(), manual.to_dense(), atol=1e-15)

    late, early = routine.global_relation("late"), routine.global_relation("early")
    np.testing.assert_allclose(late.values, rescale(normalize(pairwise_dist(data)), 3.0).values)
    assert late.values.sum() == pytest.approx(3.0)
    assert early.values.sum() == pytest.approx(1.0)


def test_connectivity_with_equal_distances():
    dists = RelationMatrix(np.ones((5, 5)) - np.eye(5))
    values = connectivity_calibrate(dists, 4).probabilities.values
    off_diagonal = values[~np.eye(5, dtype=bool)]
    # Every membership ties at the nearest distance; the row is scaled to log2(4) = 2 < 4 entries
    np.testing.assert_allclose(off_diagonal, 0.5)
    np.testing.assert_allclose(values.sum(axis=1), 2.0)
    few = connectivity_calibrate(RelationMatrix(np.ones((3, 3)) - np.eye(3)), 8).probabilities.values
    # Two entries cannot reach log2(8) = 3
    np.testing.assert_allclose(few.sum(axis=1), 2.0)

"""
Relation matrices between items.

Global relations are computed once over the whole dataset before training
(exact pairwise distances, k-nearest-neighbor distances, label equality).
Batch relations are differentiable distances between model outputs.
"""
import logging
from dataclasses import dataclass, replace
from typing import Literal, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.spatial.distance import cdist
from sklearn.neighbors import NearestNeighbors

from .. import config
from ..errors import DataError, UnknownValueError
from . import StrictOptions
from .autodiff import DiffTensor, abs_, as_tensor, matmul, mul, reshape, sqrt, sum_, take

logger = logging.getLogger(__name__)

# Keeps the euclidean gradient finite at coincident points
DIST_EPS = 1e-12
KNN_CHUNK = 1024

# Metric name -> scipy cdist name
METRICS = {
    "euclidean": "euclidean",
    "sqeuclidean": "sqeuclidean",
    "manhattan": "cityblock",
    "cosine": "cosine",
}

Metric = Literal["euclidean", "sqeuclidean", "manhattan", "cosine"]


@dataclass
class RelationMatrix:
    """
    Dense square or sparse (CSR, one row per item) relation.

    `scale` is the total mass a normalized relation should carry; it starts
    at 1 and is multiplied by `multiply` transforms.
    """

    values: Union[np.ndarray, sparse.csr_matrix]
    symmetric: bool = False
    normalized: bool = False
    scale: float = 1.0

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def is_sparse(self) -> bool:
        return sparse.issparse(self.values)

    @property
    def form(self) -> str:
        return "sparse_neighbor" if self.is_sparse else "dense_square"

    @property
    def nnz(self) -> int:
        if self.is_sparse:
            return int(np.count_nonzero(self.values.data))
        return int(np.count_nonzero(self.values))

    def with_values(self, values, **flags) -> "RelationMatrix":
        return replace(self, values=values, **flags)

    def to_dense(self) -> np.ndarray:
        return self.values.toarray() if self.is_sparse else np.asarray(self.values)

    def off_diagonal_total(self) -> float:
        return float(self.values.sum() - self.values.diagonal().sum())

    def values_at(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Relation values at (rows[k], cols[k]) pairs."""
        if len(rows) == 0:
            return np.zeros(0)
        if self.is_sparse:
            return np.asarray(self.values[rows, cols]).ravel().astype(np.float64)
        return self.values[rows, cols].astype(np.float64)

    def to_csv(self, path) -> None:
        """Dense: square table. Sparse: one (row, col, value) triple per entry."""
        if self.is_sparse:
            coo = self.values.tocoo()
            pd.DataFrame({"row": coo.row, "col": coo.col, "value": coo.data}).to_csv(
                path, index=False)
        else:
            pd.DataFrame(self.values).to_csv(path, index=False)


@dataclass
class BatchRelations:
    """Differentiable relation over a processed batch (b x b matrix or per-edge vector)."""

    values: DiffTensor
    indices: np.ndarray
    per_edge: bool = False

    def off_diagonal_mask(self) -> np.ndarray:
        b = self.values.shape[0]
        return 1.0 - np.eye(b)


def _check_metric(metric: str) -> str:
    if metric not in METRICS:
        raise UnknownValueError(metric, "metric", path="options.metric")
    return METRICS[metric]


def _check_finite(data: np.ndarray) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise DataError(f"relation input must be a matrix, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise DataError("relation input contains non-finite values")
    return data


# ---------------------------------------------------------------------------
# Global relations
# ---------------------------------------------------------------------------

def pairwise_dist(data: np.ndarray, metric: str = "euclidean") -> RelationMatrix:
    """Exact n x n distance matrix."""
    scipy_metric = _check_metric(metric)
    data = _check_finite(data)
    dists = cdist(data, data, metric=scipy_metric)
    np.fill_diagonal(dists, 0.0)
    return RelationMatrix(dists, symmetric=True)


def knn_relations(data: np.ndarray, k: int, metric: str = "euclidean") -> RelationMatrix:
    """
    k nearest neighbors of every item (self excluded) with their distances.

    Exact chunked sort below KNN_TREE_THRESHOLD items; ties go to the lower
    index. Larger inputs use a ball tree.
    """
    scipy_metric = _check_metric(metric)
    data = _check_finite(data)
    n = len(data)
    if not 1 <= k < n:
        raise DataError(f"n_neighbors must satisfy 1 <= k < n (k={k}, n={n})")

    if n > config.KNN_TREE_THRESHOLD:
        neighbors, dists = _tree_neighbors(data, k, metric)
    else:
        neighbors = np.empty((n, k), dtype=np.intp)
        dists = np.empty((n, k))
        for start in range(0, n, KNN_CHUNK):
            stop = min(start + KNN_CHUNK, n)
            block = cdist(data[start:stop], data, metric=scipy_metric)
            rows = np.arange(stop - start)
            block[rows, start + rows] = np.inf
            order = np.argsort(block, axis=1, kind="stable")[:, :k]
            neighbors[start:stop] = order
            dists[start:stop] = np.take_along_axis(block, order, axis=1)

    rows = np.repeat(np.arange(n), k)
    matrix = sparse.csr_matrix((dists.ravel(), (rows, neighbors.ravel())), shape=(n, n))
    matrix.sort_indices()
    return RelationMatrix(matrix)


def _tree_neighbors(data: np.ndarray, k: int, metric: str) -> Tuple[np.ndarray, np.ndarray]:
    algorithm = "brute" if metric == "cosine" else "ball_tree"
    knn_model = NearestNeighbors(n_neighbors=k + 1, algorithm=algorithm, metric=METRICS[metric])
    knn_model.fit(data)
    dists, neighbors = knn_model.kneighbors(data)
    n = len(data)
    keep = neighbors != np.arange(n)[:, None]
    # Rows where self was not returned (duplicates) drop their farthest hit instead
    missing_self = keep.all(axis=1)
    keep[missing_self, -1] = False
    neighbors = neighbors[keep].reshape(n, k)
    dists = dists[keep].reshape(n, k)
    logger.debug(f"Ball-tree neighbor search over {n} items (k={k})")
    return neighbors, dists


def pairwise_equality(labels: np.ndarray) -> RelationMatrix:
    """1 where two items share a label, 0 elsewhere and on the diagonal."""
    labels = np.asarray(labels).ravel()
    equal = (labels[:, None] == labels[None, :]).astype(np.float64)
    np.fill_diagonal(equal, 0.0)
    return RelationMatrix(equal, symmetric=True)


def subset_for_batch(rel: RelationMatrix, indices) -> Tuple[np.ndarray, bool]:
    """
    Submatrix of a global relation over batch items.

    Normalized relations are rescaled so the off-diagonal block carries the
    relation's scale. Returns (matrix, degenerate) where degenerate marks an
    all-zero block that could not be renormalized.
    """
    indices = np.asarray(indices, dtype=np.intp)
    if indices.size and (indices.min() < 0 or indices.max() >= rel.n):
        raise DataError(f"batch index out of range for a relation over {rel.n} items")
    if len(np.unique(indices)) != len(indices):
        raise DataError("batch indices must be distinct")

    if rel.is_sparse:
        block = rel.values[indices][:, indices].toarray()
    else:
        block = rel.values[np.ix_(indices, indices)].astype(np.float64)

    if not rel.normalized:
        return block, False
    np.fill_diagonal(block, 0.0)
    total = block.sum()
    if total == 0:
        return block, True
    return block * (rel.scale / total), False


# ---------------------------------------------------------------------------
# Batch relations
# ---------------------------------------------------------------------------

def _distance_from_diff(diff: DiffTensor, metric: str, axis: int) -> DiffTensor:
    if metric == "euclidean":
        return sqrt(sum_(diff * diff, axis=axis) + DIST_EPS)
    if metric == "sqeuclidean":
        return sum_(diff * diff, axis=axis)
    return sum_(abs_(diff), axis=axis)


def batch_pdist(output, metric: str = "euclidean", edges: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                indices: Optional[np.ndarray] = None) -> BatchRelations:
    """
    Differentiable distances between rows of a model output.

    Without `edges` the result is a b x b matrix with a zero diagonal; with
    `edges=(heads, tails)` (row positions in `output`) it is one distance per
    edge.
    """
    _check_metric(metric)
    output = as_tensor(output)
    b, d = output.shape
    if indices is None:
        indices = np.arange(b)

    if edges is not None:
        heads, tails = edges
        a, c = take(output, np.asarray(heads)), take(output, np.asarray(tails))
        if metric == "cosine":
            return BatchRelations(_cosine_rows(a, c), indices, per_edge=True)
        return BatchRelations(_distance_from_diff(a - c, metric, axis=1), indices, per_edge=True)

    if b < 2:
        raise DataError("batch distances need at least two rows")
    mask = 1.0 - np.eye(b)
    if metric == "cosine":
        norms = sqrt(sum_(output * output, axis=1, keepdims=True) + DIST_EPS)
        unit = output / norms
        dists = (1.0 - matmul(unit, unit.T)) * mask
        return BatchRelations(dists, indices)
    diff = reshape(output, (b, 1, d)) - reshape(output, (1, b, d))
    dists = mul(_distance_from_diff(diff, metric, axis=2), mask)
    return BatchRelations(dists, indices)


def _cosine_rows(a: DiffTensor, c: DiffTensor) -> DiffTensor:
    dot = sum_(a * c, axis=1)
    na = sqrt(sum_(a * a, axis=1) + DIST_EPS)
    nc = sqrt(sum_(c * c, axis=1) + DIST_EPS)
    return 1.0 - dot / (na * nc)


# ---------------------------------------------------------------------------
# Registered relation types
# ---------------------------------------------------------------------------

class PairwiseOptions(StrictOptions):
    metric: Metric = "euclidean"


class NeighborOptions(StrictOptions):
    metric: Metric = "euclidean"
    n_neighbors: Optional[int] = None


class EqualityOptions(StrictOptions):
    pass


class PairwiseRelation:
    """Exact distances; usable at both levels."""

    levels = ("global", "batch")
    Options = PairwiseOptions

    def compute_global(self, data: np.ndarray, options: PairwiseOptions, **_) -> RelationMatrix:
        return pairwise_dist(data, options.metric)

    def compute_batch(self, output, options: PairwiseOptions, edges=None, indices=None) -> BatchRelations:
        return batch_pdist(output, options.metric, edges=edges, indices=indices)


class NeighborRelation:
    """Sparse k-nearest-neighbor distances."""

    levels = ("global",)
    Options = NeighborOptions
    DEFAULT_K = 15

    def compute_global(self, data: np.ndarray, options: NeighborOptions, default_k: Optional[int] = None,
                       **_) -> RelationMatrix:
        n = len(data)
        k = options.n_neighbors or default_k or self.DEFAULT_K
        k = min(k, n - 1)
        return knn_relations(data, k, options.metric)


class PairwiseEqualityRelation:
    """Label equality (same class -> 1)."""

    levels = ("global",)
    Options = EqualityOptions
    default_data = "labels"

    def compute_global(self, data: np.ndarray, options: EqualityOptions, **_) -> RelationMatrix:
        data = np.asarray(data)
        if data.ndim == 2:
            if data.shape[1] != 1:
                raise DataError(f"pairwise_eq needs a label vector, got width {data.shape[1]}")
            data = data[:, 0]
        return pairwise_equality(data)

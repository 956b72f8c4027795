"""Derived data computed before training: PCA scores and spectral layouts."""
import logging
import warnings
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import Field
from scipy.linalg import eigh

from ..errors import DataError, EigenSolverError
from . import StrictOptions
from .relations import RelationMatrix

logger = logging.getLogger(__name__)

# Largest absolute coordinate of the registered spectral initialisation
SPECTRAL_INIT_EXTENT = 10.0
EIGEN_CLUSTER_TOL = 1e-9


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its entry of largest magnitude is positive."""
    if vectors.size == 0:
        return vectors
    peaks = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[peaks, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def pca(data: np.ndarray, out_dim: int) -> np.ndarray:
    """Projections onto the top `out_dim` principal directions, highest variance first."""
    data = np.asarray(data, dtype=np.float64)
    n, width = data.shape
    if out_dim > width:
        raise DataError(f"pca out_dim {out_dim} exceeds data width {width}")
    if n < 2:
        raise DataError("pca needs at least two items")

    centered = data - data.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    try:
        evals, evecs = eigh(cov)
    except np.linalg.LinAlgError as exc:
        raise EigenSolverError(f"covariance eigendecomposition failed: {exc}")
    order = np.argsort(-evals, kind="stable")
    evals, evecs = evals[order], _fix_signs(evecs[:, order])

    scores = centered @ evecs[:, :out_dim]
    tol = 1e-12 * max(1.0, float(evals[0]))
    usable = int(np.sum(evals[:out_dim] > tol))
    if usable < out_dim:
        message = f"pca found only {usable} non-degenerate directions; padding {out_dim - usable} columns with zeros"
        warnings.warn(message)
        logger.warning(message)
        scores[:, usable:] = 0.0
    return scores


def laplacian_eigenpairs(weights: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Eigenpairs of L = I - D^-1/2 W D^-1/2, ascending.

    Within the null space the first vector is always the trivial direction
    D^1/2 1 (normalized), so later columns are orthogonal to it.
    """
    weights = np.asarray(weights, dtype=np.float64)
    n = len(weights)
    degree = weights.sum(axis=1)
    inv_sqrt = np.zeros(n)
    connected = degree > 0
    inv_sqrt[connected] = 1.0 / np.sqrt(degree[connected])
    laplacian = np.eye(n) - inv_sqrt[:, None] * weights * inv_sqrt[None, :]
    try:
        evals, evecs = eigh(laplacian)
    except np.linalg.LinAlgError as exc:
        raise EigenSolverError(f"Laplacian eigendecomposition failed: {exc}")

    trivial = np.sqrt(degree)
    norm = np.linalg.norm(trivial)
    block = int(np.sum(evals <= evals[0] + EIGEN_CLUSTER_TOL))
    if norm > 0 and block > 1:
        trivial = trivial / norm
        rest = evecs[:, :block] - np.outer(trivial, trivial @ evecs[:, :block])
        left, _s, _vt = np.linalg.svd(rest, full_matrices=False)
        evecs[:, :block] = np.column_stack([trivial, left[:, :block - 1]])
    return evals, evecs


def spectral_embedding(rel, out_dim: int) -> np.ndarray:
    """Eigenvectors 2..out_dim+1 of the normalized Laplacian; isolated items at the origin."""
    weights = rel.to_dense() if isinstance(rel, RelationMatrix) else np.asarray(rel, dtype=np.float64)
    n = len(weights)
    if out_dim + 1 > n:
        raise EigenSolverError(f"spectral embedding of dimension {out_dim} needs more than {n} items")
    if np.any(weights < 0):
        raise DataError("spectral embedding needs non-negative affinities")
    _evals, evecs = laplacian_eigenpairs(weights)
    coords = _fix_signs(evecs[:, 1:out_dim + 1].copy())
    coords[weights.sum(axis=1) == 0] = 0.0
    return coords


# ---------------------------------------------------------------------------
# Registered data functions
# ---------------------------------------------------------------------------

class DerivedOptions(StrictOptions):
    dim: int = Field(2, ge=1)


class PcaDataFunc:
    Options = DerivedOptions
    sources = ("data",)

    def __call__(self, inputs: Sequence, options: DerivedOptions) -> np.ndarray:
        data = np.column_stack([np.asarray(x, dtype=np.float64).reshape(len(x), -1) for x in inputs])
        return pca(data, options.dim)


class SpectralDataFunc:
    Options = DerivedOptions
    sources = ("rels",)

    def __call__(self, inputs: List[RelationMatrix], options: DerivedOptions) -> np.ndarray:
        coords = spectral_embedding(inputs[0], options.dim)
        extent = np.abs(coords).max()
        return coords if extent == 0 else coords * (SPECTRAL_INIT_EXTENT / extent)

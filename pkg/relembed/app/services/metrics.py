"""
Embedding quality metrics: normalized stress, trustworthiness, accuracy and
silhouette of known classes.
"""
import logging
from typing import Dict, Optional

import numpy as np
from scipy.spatial.distance import pdist
from sklearn.manifold import trustworthiness as sk_trustworthiness
from sklearn.metrics import silhouette_score

from ..errors import DataError, ShapeMismatchError

logger = logging.getLogger(__name__)

DEFAULT_K = 10


def normalized_stress(d_hi, d_lo) -> float:
    """sum (d_hi - d_lo)^2 / sum d_hi^2 over condensed distance vectors."""
    d_hi = np.asarray(d_hi, dtype=np.float64).ravel()
    d_lo = np.asarray(d_lo, dtype=np.float64).ravel()
    if d_hi.shape != d_lo.shape:
        raise ShapeMismatchError(f"stress: {len(d_hi)} high-dimensional distances vs {len(d_lo)} embedding distances")
    denom = float(np.sum(d_hi ** 2))
    if denom == 0:
        raise DataError("stress is undefined when every high-dimensional distance is zero")
    return float(np.sum((d_hi - d_lo) ** 2) / denom)


def embedding_stress(data: np.ndarray, embedding: np.ndarray) -> float:
    if len(data) != len(embedding):
        raise ShapeMismatchError(f"stress: {len(data)} data rows vs {len(embedding)} embedding rows")
    return normalized_stress(pdist(np.asarray(data, dtype=np.float64)), pdist(np.asarray(embedding, dtype=np.float64)))


def trustworthiness(hi: np.ndarray, lo: np.ndarray, k: int = DEFAULT_K) -> float:
    """Rank-based penalty for embedding neighbors that are not neighbors in the data (1 is best)."""
    hi = np.asarray(hi, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    n = len(hi)
    if len(lo) != n:
        raise ShapeMismatchError(f"trustworthiness: {n} data rows vs {len(lo)} embedding rows")
    if not 1 <= k < n / 2:
        raise DataError(f"trustworthiness needs 1 <= k < n/2 (k={k}, n={n})")
    return float(sk_trustworthiness(hi, lo, n_neighbors=k))


def accuracy(logits: np.ndarray, labels) -> float:
    """Fraction of rows whose argmax matches the label; ties go to the lowest class index."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels).ravel()
    if len(logits) != len(labels):
        raise ShapeMismatchError(f"accuracy: {len(logits)} logit rows vs {len(labels)} labels")
    if len(labels) == 0:
        return 0.0
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def silhouette(embedding: np.ndarray, labels) -> float:
    labels = np.asarray(labels).ravel()
    if len(np.unique(labels)) < 2:
        raise DataError("silhouette needs at least two classes")
    return float(silhouette_score(np.asarray(embedding, dtype=np.float64), labels))


def evaluate(data: np.ndarray, embedding: np.ndarray, k: int = DEFAULT_K, labels=None,
             logits: Optional[np.ndarray] = None) -> Dict[str, float]:
    """One metrics row for an embedding of `data`."""
    row = {
        "n_items": len(embedding),
        "stress": embedding_stress(data, embedding),
        f"trustworthiness_{k}": trustworthiness(data, embedding, k),
    }
    if labels is not None and len(np.unique(labels)) > 1:
        row["silhouette"] = silhouette(embedding, labels)
    if labels is not None and logits is not None:
        row["accuracy"] = accuracy(logits, labels)
    logger.debug(f"Metrics: {row}")
    return row

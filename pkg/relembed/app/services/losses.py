"""
Loss functions and the weighted compound loss.

Every reduction is a mean so learning rates carry over between batch sizes.
"""
import logging
from collections import namedtuple
from typing import Dict, List, Sequence

import numpy as np
from pydantic import Field

from ..errors import DataError, DomainError, ShapeMismatchError, SpecValidationError, WeightArityError
from . import StrictOptions
from .autodiff import (
    DiffTensor,
    as_tensor,
    clip,
    exp,
    log,
    maximum,
    mean,
    mul,
    safe_log,
    sqrt,
    sum_,
    take,
)
from .relations import DIST_EPS, BatchRelations

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-12
PROB_CEILING = 1.0 - 1e-12
CORR_VAR_FLOOR = 1e-24

CorrelationResult = namedtuple("CorrelationResult", ["loss", "degenerate"])


def _relation_values(q) -> DiffTensor:
    return q.values if isinstance(q, BatchRelations) else as_tensor(q)


def _off_diagonal_mask(shape: tuple):
    if len(shape) == 2 and shape[0] == shape[1]:
        return 1.0 - np.eye(shape[0])
    return None


def _check_same_shape(p: np.ndarray, q: DiffTensor, name: str) -> None:
    if p.shape != q.shape:
        raise ShapeMismatchError(f"{name}: target shape {p.shape} differs from output shape {q.shape}")


# ---------------------------------------------------------------------------
# Relation losses
# ---------------------------------------------------------------------------

def relation_loss_mse(p: np.ndarray, q) -> DiffTensor:
    """Mean squared difference over off-diagonal entries (or over edges)."""
    p = np.asarray(p, dtype=np.float64)
    q = _relation_values(q)
    _check_same_shape(p, q, "mse")
    diff = q - p
    mask = _off_diagonal_mask(p.shape)
    if mask is None:
        return mean(diff * diff)
    count = max(p.shape[0] * (p.shape[0] - 1), 1)
    return sum_(mul(diff * diff, mask)) / float(count)


def kl_div_loss(p: np.ndarray, q, scale: float = 1.0) -> DiffTensor:
    """
    KL(p || q) with both sides renormalized over off-diagonal entries.

    p is renormalized to `scale` total mass. The loss is
    sum p log p - sum p log q + log sum q, which is the KL divergence for
    scale 1; larger scales strengthen attraction only (early exaggeration).
    q is floored at 1e-12 of its total.
    """
    p = np.asarray(p, dtype=np.float64)
    q = _relation_values(q)
    _check_same_shape(p, q, "kl_div")
    mask = _off_diagonal_mask(p.shape)
    if mask is not None:
        p = p * mask
        q = mul(q, mask)
    p_total = p.sum()
    q_total = float(q.values.sum())
    if p_total <= 0 or q_total <= 0:
        raise DomainError("kl_div needs a non-zero target and output")
    p = p * (scale / p_total)

    with np.errstate(divide="ignore", invalid="ignore"):
        entropy_term = float(np.sum(np.where(p > 0, p * np.log(p), 0.0)))
    cross = sum_(mul(safe_log(q, LOG_FLOOR * q_total), p))
    return entropy_term - cross + log(sum_(q))


def umap_cross_entropy_loss(p_edges: np.ndarray, q) -> DiffTensor:
    """Mean binary cross entropy; p is the relation value on positives and 0 on negatives."""
    p = np.asarray(p_edges, dtype=np.float64)
    q = _relation_values(q)
    mask = _off_diagonal_mask(p.shape) if p.ndim == 2 else None
    if mask is not None:
        rows, cols = np.nonzero(mask)
        p = p[rows, cols]
        q = take(q, (rows, cols))
    _check_same_shape(p, q, "cross_entropy")
    q = clip(q, LOG_FLOOR, PROB_CEILING)
    attract = mul(log(q), p)
    repel = mul(log(1.0 - q), 1.0 - p)
    return -mean(attract + repel)


# ---------------------------------------------------------------------------
# Item losses
# ---------------------------------------------------------------------------

def classification_loss(logits, labels) -> DiffTensor:
    """Mean softmax cross entropy."""
    logits = as_tensor(logits)
    labels = np.asarray(labels).astype(np.intp).ravel()
    b, n_classes = logits.shape
    if len(labels) != b:
        raise ShapeMismatchError(f"classification: {len(labels)} labels for {b} logit rows")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(f"classification label out of range for {n_classes} classes")
    shift = logits.values.max(axis=1, keepdims=True)
    log_norm = log(sum_(exp(logits - shift), axis=1)) + shift.ravel()
    picked = take(logits, (np.arange(b), labels))
    return mean(log_norm - picked)


def mse_loss(target: np.ndarray, output) -> DiffTensor:
    """Mean squared error over all entries (reconstruction and position losses)."""
    target = np.asarray(target, dtype=np.float64)
    output = as_tensor(output)
    _check_same_shape(target, output, "mse")
    diff = output - target
    return mean(diff * diff)


def reconstruction_loss(inputs: np.ndarray, decoded) -> DiffTensor:
    return mse_loss(inputs, decoded)


def position_loss(output, target: np.ndarray) -> DiffTensor:
    return mse_loss(target, output)


def triplet_margin_loss(emb_a, emb_b, emb_c, m: float = 1.0) -> DiffTensor:
    """Mean of max(d(a,b) - d(a,c) + m, 0) with euclidean d."""
    emb_a, emb_b, emb_c = as_tensor(emb_a), as_tensor(emb_b), as_tensor(emb_c)
    if emb_a.shape[0] == 0:
        return DiffTensor(0.0)
    if not (emb_a.shape == emb_b.shape == emb_c.shape):
        raise ShapeMismatchError("triplet embeddings must share a shape")
    d_pos = sqrt(sum_((emb_a - emb_b) * (emb_a - emb_b), axis=1) + DIST_EPS)
    d_neg = sqrt(sum_((emb_a - emb_c) * (emb_a - emb_c), axis=1) + DIST_EPS)
    return mean(maximum(d_pos - d_neg + m, 0.0))


def correlation_loss(a: np.ndarray, b, i: int, j: int) -> CorrelationResult:
    """
    1 - squared Pearson correlation between column i of `a` and column j of `b`.

    A constant a_i gives loss 1 with the degenerate flag set.
    """
    a = np.asarray(a, dtype=np.float64)
    b = as_tensor(b)
    if a.shape[0] < 3:
        raise DataError("correlation loss needs at least three items per batch")
    if a.shape[0] != b.shape[0]:
        raise ShapeMismatchError("correlation: row counts differ")
    if not (0 <= i < a.shape[1]) or not (0 <= j < b.shape[1]):
        raise DataError(f"correlation columns out of range (i={i}, j={j})")

    x = a[:, i] - a[:, i].mean()
    sigma_x = float(np.sqrt(np.mean(x ** 2)))
    if sigma_x < LOG_FLOOR:
        return CorrelationResult(DiffTensor(1.0), True)
    y = take(b, (slice(None), j))
    y = y - mean(y)
    cov = mean(mul(y, x))
    sigma_y = sqrt(mean(y * y) + CORR_VAR_FLOOR)
    rho = cov / (sigma_y * sigma_x)
    return CorrelationResult(1.0 - rho * rho, False)


# ---------------------------------------------------------------------------
# Compound
# ---------------------------------------------------------------------------

class CompoundLoss:
    """Weighted sum of named components; zero-weight components are logged but not differentiated."""

    def __init__(self, names: Sequence[str], weights: Sequence[float]):
        if len(names) != len(weights):
            raise WeightArityError(f"{len(weights)} weights for {len(names)} loss components")
        if any(w < 0 for w in weights):
            raise SpecValidationError("loss weights must be non-negative")
        self.names = list(names)
        self.weights = [float(w) for w in weights]
        self.last_values: Dict[str, float] = {}
        self.last_total = 0.0

    def __call__(self, values: Dict[str, DiffTensor]) -> DiffTensor:
        total = None
        for name, weight in zip(self.names, self.weights):
            value = as_tensor(values[name])
            self.last_values[name] = value.item()
            if weight == 0:
                continue
            term = value if weight == 1 else mul(value, weight)
            total = term if total is None else total + term
        if total is None:
            total = DiffTensor(0.0)
        self.last_total = total.item()
        return total


def compound(components: List[DiffTensor], weights: Sequence[float]) -> DiffTensor:
    names = [str(k) for k in range(len(components))]
    return CompoundLoss(names, weights)(dict(zip(names, components)))


# ---------------------------------------------------------------------------
# Registered loss functions
# ---------------------------------------------------------------------------

class NoOptions(StrictOptions):
    pass


class MarginOptions(StrictOptions):
    m: float = Field(1.0, ge=0)


class CorrelationOptions(StrictOptions):
    # 1-based column numbers
    i: int = Field(1, ge=1)
    j: int = Field(1, ge=1)


class MseLossFunc:
    types = ("relation", "reconstruction", "position")
    Options = NoOptions

    def relation(self, p, q, options, scale: float = 1.0) -> DiffTensor:
        return relation_loss_mse(p, q)

    def compare(self, target, output, options) -> DiffTensor:
        return mse_loss(target, output)


class KlDivLossFunc:
    types = ("relation",)
    Options = NoOptions

    def relation(self, p, q, options, scale: float = 1.0) -> DiffTensor:
        return kl_div_loss(p, q, scale=scale)


class CrossEntropyLossFunc:
    types = ("relation", "classification")
    Options = NoOptions

    def relation(self, p, q, options, scale: float = 1.0) -> DiffTensor:
        return umap_cross_entropy_loss(p, q)

    def classify(self, logits, labels, options) -> DiffTensor:
        return classification_loss(logits, labels)


class MarginLossFunc:
    types = ("triplet",)
    Options = MarginOptions

    def triplet(self, emb_a, emb_b, emb_c, options: MarginOptions) -> DiffTensor:
        return triplet_margin_loss(emb_a, emb_b, emb_c, options.m)


class CorrelationLossFunc:
    types = ("position",)
    Options = CorrelationOptions

    def compare(self, target, output, options: CorrelationOptions) -> CorrelationResult:
        return correlation_loss(target, output, options.i - 1, options.j - 1)

"""
Batch samplers.

Item sampling walks a fresh permutation per epoch. Edge sampling draws
positive edges proportionally to a relation's values and attaches uniform
negative partners to each positive edge's first vertex.
"""
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from ..errors import DataError
from .relations import RelationMatrix

logger = logging.getLogger(__name__)

MAX_NEGATIVE_RESAMPLES = 100


def phase_rng(seed: int, phase_index: int) -> np.random.Generator:
    """Counter-based generator for one training phase."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, phase_index])))


@dataclass
class Edges:
    heads: np.ndarray
    tails: np.ndarray
    negative: np.ndarray
    # For negative edges, the position of the positive edge they were drawn for; -1 otherwise
    parent: np.ndarray

    def __len__(self) -> int:
        return len(self.heads)

    @property
    def n_positive(self) -> int:
        return int((~self.negative).sum())

    @property
    def n_negative(self) -> int:
        return int(self.negative.sum())


@dataclass
class Batch:
    indices: np.ndarray
    edges: Optional[Edges] = None
    triplets: Optional[np.ndarray] = field(default=None)

    @property
    def size(self) -> int:
        return len(self.indices)

    def positions(self, item_ids: np.ndarray) -> np.ndarray:
        """Row positions of global item ids inside this batch."""
        return np.searchsorted(self.indices, np.asarray(item_ids, dtype=np.intp))

    def take(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values)[self.indices]


def item_batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[Batch]:
    """One epoch: a random permutation cut into consecutive chunks."""
    if batch_size < 1:
        raise DataError("batch_size must be at least 1")
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield Batch(np.sort(order[start:start + batch_size]))


class ItemSampler:
    def __init__(self, n: int, batch_size: int):
        self.n = n
        self.batch_size = max(1, min(batch_size, n))

    @property
    def batches_per_epoch(self) -> int:
        return math.ceil(self.n / self.batch_size)

    def epoch(self, rng: np.random.Generator) -> Iterator[Batch]:
        return item_batches(self.n, self.batch_size, rng)


class EdgeSampler:
    """
    Positive edges drawn with probability proportional to relation values
    (cumulative table + binary search), plus `rate` negatives per positive.
    """

    def __init__(self, rel: RelationMatrix, n_pos: int, rate: int, n_batches: Optional[int] = None):
        if rate < 0:
            raise DataError("negative sampling rate must be non-negative")
        if n_pos < 1:
            raise DataError("edge batches need at least one positive edge")
        coo = rel.values.tocoo() if rel.is_sparse else None
        if coo is not None:
            rows, cols, weights = coo.row, coo.col, coo.data.astype(np.float64)
        else:
            rows, cols = np.nonzero(rel.values)
            weights = np.asarray(rel.values, dtype=np.float64)[rows, cols]
        keep = (rows != cols) & (weights > 0)
        if np.any(weights < 0):
            raise DataError("edge sampling needs a non-negative relation")
        rows, cols, weights = rows[keep], cols[keep], weights[keep]
        if len(weights) == 0:
            raise DataError("edge sampling needs a relation with at least one positive entry")

        self.rel = rel
        self.n = rel.n
        self.n_pos = n_pos
        self.rate = rate
        self._rows = rows.astype(np.intp)
        self._cols = cols.astype(np.intp)
        self._cumulative = np.cumsum(weights)
        self.nnz = len(weights)
        self._n_batches = n_batches

    @property
    def batches_per_epoch(self) -> int:
        if self._n_batches:
            return self._n_batches
        return math.ceil(self.nnz / self.n_pos)

    def draw_positive(self, rng: np.random.Generator, count: int):
        targets = rng.random(count) * self._cumulative[-1]
        picks = np.searchsorted(self._cumulative, targets, side="right")
        picks = np.minimum(picks, self.nnz - 1)
        return self._rows[picks], self._cols[picks]

    def draw_negative(self, rng: np.random.Generator, anchors: np.ndarray):
        """Partners k != i with rel(i, k) == 0; returns (anchors, partners, source positions)."""
        partners = rng.integers(0, self.n, size=len(anchors))
        bad = self._invalid(anchors, partners)
        attempts = 0
        while bad.any() and attempts < MAX_NEGATIVE_RESAMPLES:
            partners[bad] = rng.integers(0, self.n, size=int(bad.sum()))
            bad = self._invalid(anchors, partners)
            attempts += 1
        if bad.any():
            message = f"skipped {int(bad.sum())} negative edges with no zero-relation partner after {MAX_NEGATIVE_RESAMPLES} resamples"
            warnings.warn(message)
            logger.warning(message)
        keep = ~bad
        return anchors[keep], partners[keep], np.nonzero(keep)[0]

    def _invalid(self, anchors: np.ndarray, partners: np.ndarray) -> np.ndarray:
        return (anchors == partners) | (self.rel.values_at(anchors, partners) != 0)

    def sample(self, rng: np.random.Generator) -> Batch:
        heads, tails = self.draw_positive(rng, self.n_pos)
        anchors = np.repeat(heads, self.rate)
        parents = np.repeat(np.arange(self.n_pos), self.rate)
        neg_heads, neg_tails, kept = self.draw_negative(rng, anchors)

        edges = Edges(
            heads=np.concatenate([heads, neg_heads]),
            tails=np.concatenate([tails, neg_tails]),
            negative=np.concatenate([np.zeros(len(heads), bool), np.ones(len(neg_heads), bool)]),
            parent=np.concatenate([np.full(len(heads), -1), parents[kept]]).astype(np.intp),
        )
        indices = np.unique(np.concatenate([edges.heads, edges.tails]))
        return Batch(indices, edges=edges)

    def epoch(self, rng: np.random.Generator) -> Iterator[Batch]:
        for _ in range(self.batches_per_epoch):
            yield self.sample(rng)


def negative_edge_batches(rel: RelationMatrix, n_pos: int, rate: int, rng: np.random.Generator,
                          n_batches: Optional[int] = None) -> Iterator[Batch]:
    return EdgeSampler(rel, n_pos, rate, n_batches=n_batches).epoch(rng)


def triplets_from_edges(batch: Batch) -> np.ndarray:
    """(anchor, positive, negative) rows built from each negative edge and its parent positive."""
    edges = batch.edges
    if edges is None:
        raise DataError("triplets need an edge batch")
    neg = np.nonzero(edges.negative)[0]
    parents = edges.parent[neg]
    if np.any(parents < 0) or np.any(edges.negative[parents]):
        raise DataError("negative edge without a positive parent")
    if np.any(edges.heads[parents] != edges.heads[neg]):
        raise DataError("negative edge does not share its parent's anchor")
    triplets = np.column_stack([edges.heads[neg], edges.tails[parents], edges.tails[neg]]).astype(np.intp)
    if len(triplets) == 0:
        message = "edge batch produced no triplets"
        warnings.warn(message)
        logger.warning(message)
    batch.triplets = triplets
    return triplets

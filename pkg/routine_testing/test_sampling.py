import numpy as np
import pytest

from relembed.app.errors import DataError
from relembed.app.services.relations import RelationMatrix, knn_relations
from relembed.app.services.sampling import (
    Batch,
    EdgeSampler,
    ItemSampler,
    phase_rng,
    triplets_from_edges,
)


def _chain_relation(n: int) -> RelationMatrix:
    """Each item related to its two ring neighbors, nothing else."""
    values = np.zeros((n, n))
    for i in range(n):
        values[i, (i + 1) % n] = values[(i + 1) % n, i] = 1.0
    return RelationMatrix(values, symmetric=True)


def test_item_epoch_is_a_partition():
    sampler = ItemSampler(23, 5)
    batches = list(sampler.epoch(phase_rng(0, 0)))
    assert len(batches) == sampler.batches_per_epoch == 5
    assert [b.size for b in batches] == [5, 5, 5, 5, 3]
    seen = np.concatenate([b.indices for b in batches])
    assert sorted(seen.tolist()) == list(range(23))
    assert all(np.all(np.diff(b.indices) > 0) for b in batches)


def test_item_batch_size_clamped_to_dataset():
    sampler = ItemSampler(4, 100)
    assert sampler.batch_size == 4 and sampler.batches_per_epoch == 1


def test_phase_rng_is_reproducible_and_phase_specific():
    a = phase_rng(3, 0).random(5)
    assert np.array_equal(a, phase_rng(3, 0).random(5))
    assert not np.array_equal(a, phase_rng(3, 1).random(5))
    assert not np.array_equal(a, phase_rng(4, 0).random(5))


def test_positive_edges_follow_relation_weights():
    values = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 3.0], [6.0, 0.0, 0.0]])
    sampler = EdgeSampler(RelationMatrix(values), n_pos=1, rate=0)
    n_draws = 30000
    heads, tails = sampler.draw_positive(phase_rng(1, 0), n_draws)
    probs = np.array([0.1, 0.3, 0.6])
    counts = np.array([
        np.sum((heads == 0) & (tails == 1)),
        np.sum((heads == 1) & (tails == 2)),
        np.sum((heads == 2) & (tails == 0)),
    ])
    assert counts.sum() == n_draws
    sigma = np.sqrt(n_draws * probs * (1 - probs))
    assert np.all(np.abs(counts - n_draws * probs) < 3 * sigma)


def test_negative_edges_have_zero_relation():
    rel = _chain_relation(30)
    sampler = EdgeSampler(rel, n_pos=20, rate=3)
    batch = sampler.sample(phase_rng(0, 0))
    edges = batch.edges
    assert edges.n_positive == 20 and edges.n_negative == 60
    neg = edges.negative
    assert np.all(rel.values_at(edges.heads[neg], edges.tails[neg]) == 0)
    assert np.all(edges.heads[neg] != edges.tails[neg])
    assert np.all(rel.values_at(edges.heads[~neg], edges.tails[~neg]) > 0)
    # Every negative shares the anchor of the positive it was drawn for
    assert np.all(edges.heads[neg] == edges.heads[edges.parent[neg]])
    assert set(np.concatenate([edges.heads, edges.tails]).tolist()) == set(batch.indices.tolist())


def test_edge_batches_per_epoch():
    rel = knn_relations(np.arange(20.0).reshape(-1, 1), 2)
    assert EdgeSampler(rel, n_pos=10, rate=1).batches_per_epoch == 4
    assert EdgeSampler(rel, n_pos=10, rate=1, n_batches=7).batches_per_epoch == 7
    assert len(list(EdgeSampler(rel, 10, 1, n_batches=3).epoch(phase_rng(0, 1)))) == 3


def test_edge_sampler_rejects_bad_relations():
    with pytest.raises(DataError):
        EdgeSampler(RelationMatrix(np.zeros((3, 3))), n_pos=2, rate=1)
    with pytest.raises(DataError):
        EdgeSampler(_chain_relation(4), n_pos=2, rate=-1)


def test_no_negative_partner_is_skipped_with_warning():
    values = np.ones((4, 4)) - np.eye(4)
    sampler = EdgeSampler(RelationMatrix(values), n_pos=3, rate=2)
    with pytest.warns(UserWarning):
        batch = sampler.sample(phase_rng(0, 0))
    assert batch.edges.n_negative == 0


def test_triplets_from_edge_batch():
    rel = _chain_relation(40)
    batch = EdgeSampler(rel, n_pos=15, rate=2).sample(phase_rng(5, 0))
    triplets = triplets_from_edges(batch)
    assert triplets.shape == (30, 3)
    assert np.all(rel.values_at(triplets[:, 0], triplets[:, 1]) > 0)
    assert np.all(rel.values_at(triplets[:, 0], triplets[:, 2]) == 0)
    assert batch.triplets is triplets
    positions = batch.positions(triplets.ravel())
    assert np.array_equal(batch.indices[positions], triplets.ravel())


def test_triplets_need_edges():
    with pytest.raises(DataError):
        triplets_from_edges(Batch(np.arange(4)))

import numpy as np
import pytest

from relembed.app import presets
from relembed.app.errors import (
    DimensionMismatchError,
    IncompatibleSamplerError,
    MissingDataKeyError,
    MissingMethodError,
)
from relembed.app.routine import compile_routine
from relembed.app.services.metrics import accuracy, embedding_stress, silhouette
from relembed.app.services.models import DirectEmbedding, FullyConnectedModel
from relembed.app.spec import parse_spec

MDS = """
relations:
  - name: hd
    level: global
    type: pairwise
  - name: ld
    level: batch
    type: pairwise
losses:
  - name: mds
    type: relation
    func: mse
    keys:
      rels: [hd, ld]
training phases:
  - epochs: {epochs}
    sampling:
      options:
        batch size: 30
    optimizer:
      options:
        lr: 0.05
    loss:
      components: mds
"""


def _model(heads=None, in_dim=5, hidden=(16,), seed=0):
    return FullyConnectedModel(in_dim, list(hidden), heads or {"embed": 2}, seed=seed)


def _mds(epochs=30):
    return parse_spec(MDS.format(epochs=epochs))


# ---------------------------------------------------------------------------
# Compile checks
# ---------------------------------------------------------------------------

def test_missing_data_key(three_blobs):
    spec = parse_spec({
        "losses": [{"type": "position", "func": "mse", "keys": {"data": ["main", "targets"]}}],
        "training phases": [{"loss": {"components": ["position"]}}],
    })
    with pytest.raises(MissingDataKeyError):
        compile_routine(spec, _model(), three_blobs)


def test_missing_relation_data(three_blobs):
    spec = parse_spec(MDS.format(epochs=1).replace("type: pairwise\n  - name: ld",
                                                   "type: pairwise\n    data: weights\n  - name: ld"))
    with pytest.raises(MissingDataKeyError):
        compile_routine(spec, _model(), three_blobs)


def test_missing_model_method(three_blobs):
    spec = presets.preset("classifier")
    with pytest.raises(MissingMethodError):
        compile_routine(spec, _model(), three_blobs)


def test_input_width_mismatch(three_blobs):
    with pytest.raises(DimensionMismatchError):
        compile_routine(_mds(), _model(in_dim=4), three_blobs)


def test_position_target_width(three_blobs):
    spec = parse_spec({
        "losses": [{"type": "position", "func": "mse", "keys": {"data": ["main", "main"]}}],
        "training phases": [{"loss": {"components": ["position"]}}],
    })
    with pytest.raises(DimensionMismatchError):
        compile_routine(spec, _model(), three_blobs)


def test_too_few_classes(three_blobs):
    with pytest.raises(DimensionMismatchError):
        compile_routine(presets.preset("classifier"), _model({"embed": 2, "classify": 2}), three_blobs)


def test_direct_model_size(three_blobs):
    with pytest.raises(DimensionMismatchError):
        compile_routine(_mds(), DirectEmbedding(80, 2), three_blobs)


def test_triplet_needs_edge_sampling(three_blobs):
    document = presets.preset_document("triplet_tsne")
    document["training_phases"][1]["sampling"] = {"type": "item", "options": {"batch_size": 30}}
    with pytest.raises(IncompatibleSamplerError):
        compile_routine(parse_spec(document), _model(), three_blobs)


# ---------------------------------------------------------------------------
# End to end
# ---------------------------------------------------------------------------

def test_mds_reduces_stress(three_blobs):
    routine = compile_routine(_mds(epochs=40), _model(), three_blobs, seed=0)
    before = embedding_stress(three_blobs["main"], routine.embedding())
    routine.train(progress=False)
    after = embedding_stress(three_blobs["main"], routine.embedding())
    assert after < before
    assert routine.embedding().shape == (90, 2)
    np.testing.assert_array_equal(routine.apply(three_blobs["main"]), routine.embedding())


def test_direct_embedding_routine(three_blobs):
    model = DirectEmbedding(90, 2, seed=3)
    routine = compile_routine(_mds(epochs=40), model, three_blobs)
    before = embedding_stress(three_blobs["main"], routine.embedding())
    routine.train(progress=False)
    assert embedding_stress(three_blobs["main"], routine.embedding()) < before
    assert routine.predicted_labels() is None


def test_tsne_separates_clusters(three_blobs):
    spec = presets.preset("tsne", {"perplexity": 10, "init_epochs": 5, "epochs": 40})
    routine = compile_routine(spec, _model(hidden=(32, 16)), three_blobs, seed=1)
    routine.train(progress=False)
    assert "pca" in three_blobs and three_blobs.width("pca") == 2
    assert routine.global_relations["p"].nnz > 0
    emb = routine.embedding()
    assert np.all(np.isfinite(emb))
    assert silhouette(emb, three_blobs["labels"]) > 0.5
    kl = [row["loss_emb"] for row in routine.log.phase_rows(1)]
    assert kl[-1] < kl[0]


def test_umap_with_negative_sampling(three_blobs):
    spec = presets.preset("umap", {"init_epochs": 2, "epochs": 3, "n_neighbors": 10})
    routine = compile_routine(spec, _model(), three_blobs)
    routine.train(progress=False)
    layout = three_blobs["spectral"]
    assert layout.shape == (90, 2) and np.abs(layout).max() == pytest.approx(10.0)
    assert routine.global_relations["p"].is_sparse
    assert all(np.isfinite(row["total"]) for row in routine.log.rows)


def test_hybrid_learns_classes(three_blobs):
    spec = presets.preset("hybrid", {"epochs": 10, "w": 0.5})
    model = _model({"embed": 2, "classify": 3})
    routine = compile_routine(spec, model, three_blobs)
    routine.train(progress=False)
    predicted = routine.predicted_labels()
    assert predicted.shape == (90,)
    logits = model.apply(three_blobs["main"], "classify")
    assert accuracy(logits, three_blobs["labels"]) > 0.9
    assert {"loss_umap", "loss_class"} <= set(routine.log.rows[-1])


def test_triplet_routine_runs(three_blobs):
    spec = presets.preset("triplet_tsne", {"init_epochs": 1, "epochs": 2, "batch": 60})
    routine = compile_routine(spec, _model(), three_blobs)
    routine.train(progress=False)
    last = routine.log.rows[-1]
    assert np.isfinite(last["loss_tsne"]) and np.isfinite(last["loss_triplet"])
    assert last["total"] == pytest.approx(1000 * last["loss_tsne"] + last["loss_triplet"])


def test_attribute_guiding_lowers_correlation_loss(three_blobs):
    spec = presets.preset("attribute_guided_tsne", {"i": 1, "perplexity": 10, "weights": [0, 1],
                                                    "init_epochs": 1, "epochs": 30})
    routine = compile_routine(spec, _model(), three_blobs)
    routine.train(progress=False)
    corr = [row["loss_corr"] for row in routine.log.phase_rows(1)]
    assert corr[-1] < corr[0]


def test_autoencoder_reconstructs(three_blobs):
    spec = presets.preset("autoencoder", {"epochs": 30, "batch": 30})
    model = _model({"embed": 2, "decode": 5})
    routine = compile_routine(spec, model, three_blobs)
    routine.train(progress=False)
    recon = [row["loss_recon"] for row in routine.log.rows]
    assert recon[-1] < recon[0]

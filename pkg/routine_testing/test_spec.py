import json

import pytest

from relembed.app import registry
from relembed.app.errors import (
    DanglingReferenceError,
    DuplicateRegistrationError,
    SpecSyntaxError,
    SpecValidationError,
    UnknownComponentError,
    UnknownKeyError,
    UnknownValueError,
    WeightArityError,
)
from relembed.app.presets import preset_text
from relembed.app.services.losses import MarginOptions
from relembed.app.spec import dump_spec, load_document, parse_spec, parse_spec_file, spec_equal


@pytest.mark.parametrize("name, counts", [
    ("mds", {"derived_data": 0, "relations": 2, "global_relations": 1, "losses": 1, "phases": 1}),
    ("tsne", {"derived_data": 1, "relations": 2, "global_relations": 1, "losses": 2, "phases": 2}),
    ("umap", {"derived_data": 1, "relations": 2, "global_relations": 1, "losses": 2, "phases": 2}),
    ("triplet_tsne", {"derived_data": 1, "relations": 3, "global_relations": 2, "losses": 3, "phases": 2}),
    ("hybrid", {"derived_data": 0, "relations": 2, "global_relations": 1, "losses": 2, "phases": 1}),
])
def test_listings_parse_with_expected_counts(name, counts):
    summary = parse_spec(preset_text(name)).summary()
    assert {key: summary[key] for key in counts} == counts


def test_mds_listing_details():
    spec = parse_spec(preset_text("mds"))
    hd, ld = spec.relations
    assert (hd.name, hd.level, hd.rel_type, hd.data_key) == ("dists hd", "global", "pairwise", "main")
    assert ld.level == "batch" and ld.data_key is None
    phase = spec.training_phases[0]
    assert phase.loss.components == ["mds"] and phase.loss.weights == [1.0]
    assert phase.sampling.opts.batch_size == 10
    assert phase.optimizer.type == "adam" and phase.optimizer.opts.lr == 0.01
    assert spec.loss("mds").keys.methods == ["embed"]


def test_tsne_listing_details():
    spec = parse_spec(preset_text("tsne"))
    p = spec.relation("p")
    assert [t.transform_type for t in p.transforms] == ["perplexity", "symmetrize", "normalize"]
    assert p.transforms[0].opts.perplexity == 30
    assert spec.relation("q").transforms[0].transform_type == "t-dist"
    assert spec.derived_data[0].keys == [("data", "main")]
    assert spec.loss("emb").func == "kl_div"
    # sampling written inside the loss entry belongs to the phase
    assert spec.training_phases[1].sampling.opts.batch_size == 500


def test_umap_listing_details():
    spec = parse_spec(preset_text("umap"))
    assert spec.relation("p").transforms[0].opts.n_neighbors == 15
    assert spec.relation("p").transforms[1].opts.sub_prod
    assert spec.relation("q").transforms[0].opts.min_dist == 0.1
    sampling = spec.training_phases[1].sampling
    assert sampling.type == "edge" and sampling.opts.rels == "p" and sampling.opts.rate == 5


def test_unregistered_relation_type():
    text = preset_text("mds").replace("type: pairwise\n    options:\n      metric: euclidean\n  - name: dists ld",
                                      "type: geodesic\n    options:\n      metric: euclidean\n  - name: dists ld")
    with pytest.raises(UnknownValueError) as info:
        parse_spec(text)
    assert info.value.value == "geodesic"
    assert info.value.path == "relations[0].type"
    assert info.value.line == 5


def test_dangling_relation_reference():
    with pytest.raises(DanglingReferenceError) as info:
        parse_spec(preset_text("tsne").replace("rels: [p, q]", "rels: [p, missing]"))
    assert "missing" in str(info.value)


def test_dangling_component():
    with pytest.raises(DanglingReferenceError):
        parse_spec(preset_text("mds").replace("components: mds", "components: stress"))


def test_weight_arity():
    with pytest.raises(WeightArityError) as info:
        parse_spec(preset_text("triplet_tsne").replace("weights: [1000, 1]", "weights: [1000, 1, 5]"))
    assert info.value.path == "training_phases[1].loss.weights"


def test_unknown_key_and_bad_value():
    with pytest.raises(UnknownKeyError):
        parse_spec({"relations": [], "colour": "red"})
    with pytest.raises(UnknownKeyError):
        parse_spec(preset_text("tsne").replace("perplexity: 30", "perplexity: 30\n          tolerance: 1"))
    with pytest.raises(SpecValidationError):
        parse_spec(preset_text("tsne").replace("perplexity: 30", "perplexity: -5"))
    with pytest.raises(UnknownValueError):
        parse_spec(preset_text("mds").replace("metric: euclidean\n  - name: dists ld", "metric: chebyshev\n  - name: dists ld"))


def test_relation_level_rules():
    # neighbor relations only exist globally
    with pytest.raises(SpecValidationError):
        parse_spec({"relations": [{"name": "r", "level": "batch", "type": "neighbor"}]})
    # a relation loss needs (global, batch) in that order
    text = preset_text("mds").replace("- dists hd\n        - dists ld", "- dists ld\n        - dists hd")
    with pytest.raises(SpecValidationError):
        parse_spec(text)


def test_syntax_errors_have_lines():
    with pytest.raises(SpecSyntaxError) as info:
        load_document("relations:\n  - name: [unclosed\n")
    assert info.value.line is not None
    with pytest.raises(SpecSyntaxError):
        parse_spec("- just\n- a list\n")
    with pytest.raises(SpecSyntaxError):
        parse_spec('{"relations": [', fmt="json")


def test_identifier_spelling_is_normalized():
    text = preset_text("tsne").replace("kl div", "KL_Div").replace("training phases", "Training_Phases")
    assert parse_spec(text).loss("emb").func == "kl_div"


def test_defaults_filled_in():
    spec = parse_spec({
        "relations": [{"name": "eq", "level": "global", "type": "pairwise eq"}],
        "losses": [{"type": "classification", "func": "cross entropy"}],
        "training phases": [{"loss": {"components": ["classification"]}}],
    })
    assert spec.relation("eq").data_key == "labels"
    loss = spec.loss("classification")
    assert loss.keys.data == ["main", "labels"] and loss.keys.methods == ["classify"]
    phase = spec.training_phases[0]
    assert phase.epochs == 5 and phase.optimizer.type == "adam" and phase.optimizer.opts.lr == 0.01
    assert phase.sampling.type == "item" and phase.sampling.opts.batch_size == 100


@pytest.mark.parametrize("name", ["mds", "tsne", "umap", "triplet_tsne", "attribute_guided_tsne"])
def test_yaml_and_json_round_trip(name):
    spec = parse_spec(preset_text(name))
    again = parse_spec(dump_spec(spec))
    assert spec_equal(spec, again)
    from_json = parse_spec(dump_spec(spec, "json"), fmt="json")
    assert spec_equal(spec, from_json)
    assert json.loads(spec.to_json()) == spec.to_document()


def test_parse_spec_file(tmp_path):
    path = tmp_path / "routine.json"
    path.write_text(parse_spec(preset_text("mds")).to_json())
    assert parse_spec_file(path).summary()["relations"] == 2


def test_user_registered_loss_function():
    class HingeLoss:
        types = ("triplet",)
        Options = MarginOptions

        def triplet(self, a, b, c, options):
            return None

    registry.register("loss_func", "Hinge Loss", HingeLoss())
    try:
        with pytest.raises(DuplicateRegistrationError):
            registry.register("loss_func", "hinge_loss", HingeLoss())
        spec = parse_spec({"losses": [{"type": "triplet", "func": "hinge loss", "options": {"m": 2}}]})
        assert spec.losses[0].opts.m == 2
    finally:
        registry.unregister("loss_func", "hinge loss")
    with pytest.raises(UnknownComponentError):
        registry.resolve("loss_func", "hinge loss")


def test_loss_func_type_mismatch():
    with pytest.raises(SpecValidationError):
        parse_spec({"losses": [{"type": "triplet", "func": "kl div"}]})

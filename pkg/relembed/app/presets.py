"""
Named routines shipped as documents under app/presets/.

Each preset exposes a few knobs (perplexity, weights, lr, ...) that map to
paths inside its document. `hidden` is a model knob: it is returned by
model_options and never written into the document.
"""
import copy
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from .errors import UnknownKnobError, UnknownPresetError
from .registry import normalize_identifier
from .services.models import hidden_from_text
from .spec import RoutineSpec, normalize_document, parse_spec

logger = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).resolve().parent / "presets"

EXAGGERATION_FACTOR = 12.0

COMMON_KNOBS = {
    "lr": "training_phases.*.optimizer.options.lr",
    "batch": "training_phases.*.sampling.options.batch_size",
    "epochs": "training_phases.-1.epochs",
    "weights": "training_phases.-1.loss.weights",
}

INIT_KNOBS = {"init_epochs": "training_phases.0.epochs"}

PRESET_KNOBS = {
    "mds": {},
    "tsne": {"perplexity": "relations.0.transforms.0.options.perplexity", **INIT_KNOBS},
    "umap": {"n_neighbors": "relations.0.transforms.0.options.neighbors", **INIT_KNOBS},
    "hybrid": {"n_neighbors": "relations.0.transforms.0.options.neighbors"},
    "triplet_tsne": {
        "perplexity": "relations.0.transforms.0.options.perplexity",
        "m": "losses.2.options.m",
        **INIT_KNOBS,
    },
    "attribute_guided_tsne": {
        "perplexity": "relations.0.transforms.0.options.perplexity",
        "i": "losses.2.options.i",
        "j": "losses.2.options.j",
        **INIT_KNOBS,
    },
    "classifier": {},
    "autoencoder": {},
}

# Knobs handled in code rather than by a document path
SPECIAL_KNOBS = {
    "tsne": ("exaggeration",),
    "hybrid": ("w",),
}

PRESET_MODELS = {
    "mds": {"hidden": [5], "heads": ["embed"]},
    "tsne": {"hidden": [100, 50], "heads": ["embed"]},
    "umap": {"hidden": [100, 50], "heads": ["embed"]},
    "hybrid": {"hidden": [100, 50], "heads": ["embed", "classify"]},
    "triplet_tsne": {"hidden": [100, 50], "heads": ["embed"]},
    "attribute_guided_tsne": {"hidden": [100, 50], "heads": ["embed"]},
    "classifier": {"hidden": [100, 50], "heads": ["embed", "classify"]},
    "autoencoder": {"hidden": [100, 50], "heads": ["embed", "decode"]},
}


def available() -> List[str]:
    return sorted(PRESET_KNOBS)


def _check_name(name: str) -> str:
    key = normalize_identifier(name)
    if key not in PRESET_KNOBS:
        raise UnknownPresetError(f"unknown preset '{name}' (available: {', '.join(available())})")
    return key


def knobs(name: str) -> List[str]:
    key = _check_name(name)
    return sorted({**COMMON_KNOBS, **PRESET_KNOBS[key]}) + list(SPECIAL_KNOBS.get(key, ())) + ["hidden"]


def preset_text(name: str) -> str:
    return (PRESET_DIR / f"{_check_name(name)}.yaml").read_text(encoding="utf-8")


def _set_path(node: Any, parts: List[str], value: Any) -> None:
    head, rest = parts[0], parts[1:]
    if isinstance(node, list):
        targets = node if head == "*" else [node[int(head)]]
        if not rest:
            raise UnknownKnobError(f"knob path ends on a list index ({head})")
        for item in targets:
            _set_path(item, rest, value)
        return
    if not rest:
        node[head] = value
        return
    if node.get(head) is None:
        node[head] = [] if rest[0] == "*" or rest[0].lstrip("-").isdigit() else {}
    _set_path(node[head], rest, value)


def set_path(document: dict, path: str, value: Any) -> None:
    """Set a dotted path ("training_phases.-1.epochs"; "*" walks every list item)."""
    _set_path(document, path.split("."), copy.deepcopy(value))


def _lift_sampling(document: dict) -> None:
    """Move sampling written inside a phase's loss entry up to the phase."""
    for phase in document.get("training_phases", []):
        loss = phase.get("loss")
        if isinstance(loss, dict) and "sampling" in loss:
            phase["sampling"] = loss.pop("sampling")


def _add_exaggeration(document: dict, factor: float) -> None:
    relations = document["relations"]
    losses = document["losses"]
    phases = document["training_phases"]
    target = copy.deepcopy(relations[0])
    target["name"] = f"{target['name']}_exaggerated"
    target.setdefault("transforms", []).append({"type": "multiply", "options": {"factor": factor}})
    relations.append(target)
    main_loss = next(loss for loss in losses if loss.get("type") == "relation")
    losses.append({
        "name": f"{main_loss['name']}_exaggerated",
        "type": "relation",
        "func": main_loss["func"],
        "keys": {"rels": [target["name"], main_loss["keys"]["rels"][1]]},
    })
    phase = copy.deepcopy(phases[-1])
    phase["name"] = "exaggeration"
    phase["epochs"] = max(1, int(phase.get("epochs", 5)) // 10)
    phase["loss"] = {"components": [losses[-1]["name"]]}
    phases.insert(len(phases) - 1, phase)


def preset_document(name: str, overrides: Optional[Dict[str, Any]] = None) -> dict:
    """Normalized document of a preset with knob overrides applied."""
    key = _check_name(name)
    document = normalize_document(yaml.safe_load(preset_text(key)))
    _lift_sampling(document)
    paths = {**COMMON_KNOBS, **PRESET_KNOBS[key]}
    special = SPECIAL_KNOBS.get(key, ())
    for knob, value in (overrides or {}).items():
        knob = normalize_identifier(knob)
        if knob == "hidden" or knob in special:
            continue
        if knob not in paths:
            raise UnknownKnobError(f"preset '{key}' has no knob '{knob}' (knobs: {', '.join(knobs(key))})")
        set_path(document, paths[knob], value)

    overrides = {normalize_identifier(k): v for k, v in (overrides or {}).items()}
    if key == "hybrid" and "w" in overrides:
        w = float(overrides["w"])
        set_path(document, "training_phases.-1.loss.weights", [w, 1.0 - w])
    if key == "tsne" and overrides.get("exaggeration"):
        value = overrides["exaggeration"]
        factor = EXAGGERATION_FACTOR if value is True else float(value)
        _add_exaggeration(document, factor)
    return document


def preset(name: str, overrides: Optional[Dict[str, Any]] = None) -> RoutineSpec:
    spec = parse_spec(preset_document(name, overrides))
    logger.debug(f"Preset '{name}' with {overrides or {}}: {spec.summary()}")
    return spec


def model_options(name: str, overrides: Optional[Dict[str, Any]] = None) -> dict:
    """Trunk widths and output heads the preset expects from its model."""
    key = _check_name(name)
    options = copy.deepcopy(PRESET_MODELS[key])
    for knob, value in (overrides or {}).items():
        if normalize_identifier(knob) == "hidden":
            options["hidden"] = hidden_from_text(value) if isinstance(value, str) else \
                [int(v) for v in (value if isinstance(value, (list, tuple)) else [value])]
    return options


def parse_override(text: str) -> tuple:
    """'perplexity=100' -> ('perplexity', 100); values are read as YAML scalars or lists."""
    if "=" not in text:
        raise UnknownKnobError(f"override '{text}' must look like knob=value")
    knob, raw = text.split("=", 1)
    return normalize_identifier(knob), yaml.safe_load(raw)

"""
Routine documents.

Parsing runs in two stages:
    1. structure: YAML or JSON text -> normalized mapping -> pydantic models
       (unknown keys and malformed values are rejected here)
    2. resolution: every named component is looked up in the registry, its
       options are validated, references between entries are checked and
       defaults are filled in

Errors carry the dotted path of the offending entry and, when the source
text is available, its line number.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, field_validator, model_validator

from . import registry
from .errors import (
    DanglingReferenceError,
    SpecError,
    SpecSyntaxError,
    SpecValidationError,
    UnknownKeyError,
    UnknownValueError,
    WeightArityError,
)
from .registry import normalize_identifier

logger = logging.getLogger(__name__)

LOSS_TYPES = ("relation", "classification", "reconstruction", "position", "triplet")

DEFAULT_METHODS = {
    "relation": ["embed"],
    "classification": ["classify"],
    "reconstruction": ["encode", "decode"],
    "position": ["embed"],
    "triplet": ["embed"],
}

DEFAULT_DATA = {
    "classification": ["main", "labels"],
}

# Keys whose string values are registry identifiers (normalized like keys)
IDENTIFIER_KEYS = {"type", "func", "data_func", "level"}


def _as_list(value):
    if value is None or isinstance(value, list):
        return value
    if isinstance(value, tuple):
        return list(value)
    return [value]


class SpecModel(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


# ---------------------------------------------------------------------------
# Document models
# ---------------------------------------------------------------------------

class TransformSpec(SpecModel):
    transform_type: str = Field(alias="type")
    options: Dict[str, Any] = Field(default_factory=dict)
    _options: Any = PrivateAttr(default=None)

    @property
    def opts(self):
        return self._options


class RelationRecipe(SpecModel):
    name: str
    level: Literal["global", "batch"]
    rel_type: str = Field(alias="type")
    data_key: Optional[str] = Field(None, alias="data")
    options: Dict[str, Any] = Field(default_factory=dict)
    transforms: List[TransformSpec] = Field(default_factory=list)
    _options: Any = PrivateAttr(default=None)

    @property
    def opts(self):
        return self._options


class LossKeys(SpecModel):
    data: Optional[List[str]] = None
    rels: Optional[List[str]] = None
    methods: Optional[List[str]] = None

    @field_validator("data", "rels", "methods", mode="before")
    @classmethod
    def _listify(cls, value):
        return _as_list(value)


class LossSpec(SpecModel):
    name: Optional[str] = None
    loss_type: Literal["relation", "classification", "reconstruction", "position", "triplet"] = Field(alias="type")
    func: str
    keys: LossKeys = Field(default_factory=LossKeys)
    options: Dict[str, Any] = Field(default_factory=dict)
    _options: Any = PrivateAttr(default=None)

    @property
    def opts(self):
        return self._options


class SamplingOptions(SpecModel):
    batch_size: int = Field(100, ge=1)
    rels: Optional[str] = None
    rate: int = Field(5, ge=0)
    n_batches: Optional[int] = Field(None, ge=1)


class SamplingSpec(SpecModel):
    type: Literal["item", "edge"] = "item"
    options: Dict[str, Any] = Field(default_factory=dict)
    _options: Any = PrivateAttr(default=None)

    @property
    def opts(self) -> SamplingOptions:
        return self._options if self._options is not None else SamplingOptions()


class PhaseLoss(SpecModel):
    components: List[str]
    weights: Optional[List[float]] = None

    @field_validator("components", "weights", mode="before")
    @classmethod
    def _listify(cls, value):
        return _as_list(value)


class OptimizerSpec(SpecModel):
    type: str = "adam"
    options: Dict[str, Any] = Field(default_factory=dict)
    _options: Any = PrivateAttr(default=None)

    @property
    def opts(self):
        return self._options


class TrainingPhaseSpec(SpecModel):
    name: Optional[str] = None
    epochs: int = Field(5, ge=0)
    sampling: SamplingSpec = Field(default_factory=SamplingSpec)
    loss: PhaseLoss
    optimizer: OptimizerSpec = Field(default_factory=OptimizerSpec)

    @model_validator(mode="before")
    @classmethod
    def _lift_sampling(cls, data):
        # Sampling may be written inside the loss entry; it belongs to the phase
        if isinstance(data, dict) and isinstance(data.get("loss"), dict) and "sampling" in data["loss"]:
            if "sampling" in data:
                raise ValueError("sampling is given both in the phase and in its loss")
            data = dict(data)
            loss = dict(data["loss"])
            data["sampling"] = loss.pop("sampling")
            data["loss"] = loss
        return data


class DerivedDataSpec(SpecModel):
    name: str
    data_func: str
    keys: List[Tuple[Literal["data", "rels"], str]]
    options: Dict[str, Any] = Field(default_factory=dict)
    _options: Any = PrivateAttr(default=None)

    @property
    def opts(self):
        return self._options


class RoutineSpec(SpecModel):
    derived_data: List[DerivedDataSpec] = Field(default_factory=list)
    relations: List[RelationRecipe] = Field(default_factory=list)
    losses: List[LossSpec] = Field(default_factory=list)
    training_phases: List[TrainingPhaseSpec] = Field(default_factory=list)

    @property
    def phases(self) -> List[TrainingPhaseSpec]:
        return self.training_phases

    def relation(self, name: str) -> RelationRecipe:
        return next(r for r in self.relations if r.name == name)

    def loss(self, name: str) -> LossSpec:
        return next(l for l in self.losses if l.name == name)

    def to_document(self) -> dict:
        return self.model_dump(by_alias=True, exclude_none=True, mode="json")

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_document(), sort_keys=False)

    def to_json(self) -> str:
        return json.dumps(self.to_document(), indent=2)

    def summary(self) -> Dict[str, int]:
        return {
            "derived_data": len(self.derived_data),
            "relations": len(self.relations),
            "global_relations": sum(r.level == "global" for r in self.relations),
            "batch_relations": sum(r.level == "batch" for r in self.relations),
            "losses": len(self.losses),
            "phases": len(self.training_phases),
        }


# ---------------------------------------------------------------------------
# Text handling
# ---------------------------------------------------------------------------

def _format_path(loc) -> str:
    path = ""
    for part in loc:
        if isinstance(part, int):
            path += f"[{part}]"
        else:
            path += ("." if path else "") + str(part)
    return path


def load_document(text: str, fmt: Optional[str] = None) -> dict:
    """Parse YAML or JSON text into a plain mapping."""
    if fmt is None:
        fmt = "json" if text.lstrip().startswith("{") else "yaml"
    if fmt == "json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SpecSyntaxError(f"invalid JSON: {exc.msg}", line=exc.lineno, column=exc.colno)
    else:
        try:
            doc = yaml.safe_load(text)
        except yaml.MarkedYAMLError as exc:
            mark = exc.problem_mark
            line = mark.line + 1 if mark is not None else None
            column = mark.column + 1 if mark is not None else None
            raise SpecSyntaxError(f"invalid YAML: {exc.problem}", line=line, column=column)
        except yaml.YAMLError as exc:
            raise SpecSyntaxError(f"invalid YAML: {exc}")
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise SpecSyntaxError("a routine document must be a mapping at the top level", line=1)
    return doc


def normalize_document(node, parent_key: Optional[str] = None):
    """Normalize every mapping key and the values of identifier keys."""
    if isinstance(node, dict):
        out = {}
        for key, value in node.items():
            norm = normalize_identifier(key)
            if norm in IDENTIFIER_KEYS and isinstance(value, str):
                value = normalize_identifier(value)
            out[norm] = normalize_document(value, norm)
        return out
    if isinstance(node, list):
        return [normalize_document(item, parent_key) for item in node]
    return node


class _Locator:
    """Maps a path inside the normalized document to a source line."""

    def __init__(self, text: Optional[str]):
        self.root = None
        if text:
            try:
                self.root = yaml.compose(text)
            except yaml.YAMLError:
                self.root = None

    def line(self, loc) -> Optional[int]:
        node = self.root
        if node is None:
            return None
        line = node.start_mark.line + 1
        for part in loc:
            if isinstance(node, yaml.MappingNode):
                match = next(((k, v) for k, v in node.value if normalize_identifier(k.value) == part), None)
                if match is None:
                    break
                line = match[0].start_mark.line + 1
                node = match[1]
            elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
                node = node.value[part]
                line = node.start_mark.line + 1
            else:
                break
        return line


def _validation_error(exc: ValidationError, prefix: tuple, locator: _Locator) -> SpecError:
    err = exc.errors()[0]
    loc = tuple(prefix) + tuple(err["loc"])
    path = _format_path(loc)
    line = locator.line(loc)
    kind = err["type"]
    if kind == "extra_forbidden":
        return UnknownKeyError(f"unknown key '{loc[-1]}'", path=path, line=line)
    if kind == "literal_error":
        return UnknownValueError(str(err.get("input")), str(loc[-1]), path=path, line=line)
    if kind == "missing":
        return SpecValidationError(f"missing required key '{loc[-1]}'", path=path, line=line)
    return SpecValidationError(err["msg"], path=path, line=line)


# ---------------------------------------------------------------------------
# Resolution
# ---------------------------------------------------------------------------

class _Resolver:
    def __init__(self, spec: RoutineSpec, locator: _Locator):
        self.spec = spec
        self.locator = locator

    def fail(self, cls, message: str, loc: tuple):
        return cls(message, path=_format_path(loc), line=self.locator.line(loc))

    def lookup(self, kind: str, name: str, loc: tuple):
        if not registry.is_registered(kind, name):
            raise UnknownValueError(name, kind, path=_format_path(loc), line=self.locator.line(loc))
        return registry.resolve(kind, name)

    def options(self, implementation, options: dict, loc: tuple):
        model = registry.options_model(implementation)
        return self.validate(model, options, loc)

    def validate(self, model, options: dict, loc: tuple):
        try:
            return model.model_validate(options)
        except ValidationError as exc:
            raise _validation_error(exc, loc, self.locator)

    def run(self) -> RoutineSpec:
        self.relations()
        self.losses()
        self.phases()
        self.derived()
        return self.spec

    def relations(self) -> None:
        seen = set()
        for i, recipe in enumerate(self.spec.relations):
            loc = ("relations", i)
            if recipe.name in seen:
                raise self.fail(SpecValidationError, f"duplicate relation name '{recipe.name}'", loc + ("name",))
            seen.add(recipe.name)
            recipe.rel_type = normalize_identifier(recipe.rel_type)
            impl = self.lookup("relation", recipe.rel_type, loc + ("type",))
            if recipe.level not in getattr(impl, "levels", ("global", "batch")):
                raise self.fail(SpecValidationError,
                                f"relation type '{recipe.rel_type}' is not available at level '{recipe.level}'",
                                loc + ("level",))
            if recipe.level == "global" and recipe.data_key is None:
                recipe.data_key = getattr(impl, "default_data", "main")
            recipe._options = self.options(impl, recipe.options, loc + ("options",))
            for t, transform in enumerate(recipe.transforms):
                tloc = loc + ("transforms", t)
                transform.transform_type = normalize_identifier(transform.transform_type)
                timpl = self.lookup("transform", transform.transform_type, tloc + ("type",))
                if recipe.level not in getattr(timpl, "levels", ("global", "batch")):
                    raise self.fail(SpecValidationError,
                                    f"transform '{transform.transform_type}' is not available at level '{recipe.level}'",
                                    tloc + ("type",))
                transform._options = self.options(timpl, transform.options, tloc + ("options",))

    def _relation_level(self, name: str, loc: tuple) -> str:
        for recipe in self.spec.relations:
            if recipe.name == name:
                return recipe.level
        raise self.fail(DanglingReferenceError, f"relation '{name}' is not declared", loc)

    def losses(self) -> None:
        seen = set()
        for i, loss in enumerate(self.spec.losses):
            loc = ("losses", i)
            if loss.name is None:
                loss.name = loss.loss_type
            if loss.name in seen:
                raise self.fail(SpecValidationError, f"duplicate loss name '{loss.name}'", loc + ("name",))
            seen.add(loss.name)
            loss.func = normalize_identifier(loss.func)
            impl = self.lookup("loss_func", loss.func, loc + ("func",))
            if loss.loss_type not in getattr(impl, "types", LOSS_TYPES):
                raise self.fail(SpecValidationError,
                                f"loss function '{loss.func}' cannot be used for a {loss.loss_type} loss",
                                loc + ("func",))
            loss._options = self.options(impl, loss.options, loc + ("options",))

            keys = loss.keys
            if keys.methods is None:
                keys.methods = list(DEFAULT_METHODS[loss.loss_type])
            if keys.data is None:
                keys.data = list(DEFAULT_DATA.get(loss.loss_type, ["main"]))
            if loss.loss_type == "relation":
                if not keys.rels or len(keys.rels) != 2:
                    raise self.fail(SpecValidationError,
                                    "a relation loss names exactly one global and one batch relation",
                                    loc + ("keys", "rels"))
                for r, (name, level) in enumerate(zip(keys.rels, ("global", "batch"))):
                    found = self._relation_level(name, loc + ("keys", "rels", r))
                    if found != level:
                        raise self.fail(SpecValidationError, f"relation '{name}' must be a {level} relation",
                                        loc + ("keys", "rels", r))
            elif keys.rels:
                for r, name in enumerate(keys.rels):
                    self._relation_level(name, loc + ("keys", "rels", r))
            if loss.loss_type in ("position", "classification") and len(keys.data) < 2:
                raise self.fail(SpecValidationError, f"a {loss.loss_type} loss names two data keys",
                                loc + ("keys", "data"))

    def phases(self) -> None:
        losses = {loss.name: loss for loss in self.spec.losses}
        for i, phase in enumerate(self.spec.training_phases):
            loc = ("training_phases", i)
            components = phase.loss.components
            if not components:
                raise self.fail(SpecValidationError, "a phase needs at least one loss component",
                                loc + ("loss", "components"))
            for c, name in enumerate(components):
                if name not in losses:
                    raise self.fail(DanglingReferenceError, f"loss '{name}' is not declared",
                                    loc + ("loss", "components", c))
            if phase.loss.weights is None:
                phase.loss.weights = [1.0] * len(components)
            if len(phase.loss.weights) != len(components):
                raise self.fail(WeightArityError,
                                f"{len(phase.loss.weights)} weights for {len(components)} components",
                                loc + ("loss", "weights"))
            if any(w < 0 for w in phase.loss.weights):
                raise self.fail(SpecValidationError, "loss weights must be non-negative", loc + ("loss", "weights"))

            phase.optimizer.type = normalize_identifier(phase.optimizer.type)
            impl = self.lookup("optimizer", phase.optimizer.type, loc + ("optimizer", "type"))
            phase.optimizer._options = self.options(impl, phase.optimizer.options, loc + ("optimizer", "options"))

            sampling = phase.sampling
            sloc = loc + ("sampling", "options")
            opts = self.validate(SamplingOptions, sampling.options, sloc)
            if sampling.type == "edge":
                if opts.rels is None:
                    relation_losses = [losses[c] for c in components if losses[c].loss_type == "relation"]
                    if not relation_losses:
                        raise self.fail(SpecValidationError, "edge sampling needs options.rels", sloc)
                    opts.rels = relation_losses[0].keys.rels[0]
                    sampling.options = dict(sampling.options, rels=opts.rels)
                if self._relation_level(opts.rels, sloc + ("rels",)) != "global":
                    raise self.fail(SpecValidationError, f"edge sampling needs a global relation, got '{opts.rels}'",
                                    sloc + ("rels",))
            sampling._options = opts

    def derived(self) -> None:
        seen = set()
        for i, entry in enumerate(self.spec.derived_data):
            loc = ("derived_data", i)
            if entry.name in seen:
                raise self.fail(SpecValidationError, f"duplicate derived data name '{entry.name}'", loc + ("name",))
            seen.add(entry.name)
            entry.data_func = normalize_identifier(entry.data_func)
            impl = self.lookup("data_func", entry.data_func, loc + ("data_func",))
            entry._options = self.options(impl, entry.options, loc + ("options",))
            if not entry.keys:
                raise self.fail(SpecValidationError, "derived data needs at least one key", loc + ("keys",))
            for k, (source, name) in enumerate(entry.keys):
                if source == "rels" and self._relation_level(name, loc + ("keys", k)) != "global":
                    raise self.fail(SpecValidationError, f"derived data can only use global relations ('{name}')",
                                    loc + ("keys", k))


# ---------------------------------------------------------------------------
# Public entry points
# ---------------------------------------------------------------------------

def parse_spec(document: Union[str, dict], fmt: Optional[str] = None) -> RoutineSpec:
    """
    Parse and validate a routine document.

    Args:
        document: YAML/JSON text, or an already-loaded mapping
        fmt: "yaml" or "json"; sniffed from the text when omitted

    Raises:
        SpecSyntaxError, UnknownKeyError, UnknownValueError,
        DanglingReferenceError, SpecValidationError
    """
    text = document if isinstance(document, str) else None
    raw = load_document(text, fmt) if text is not None else document
    if not isinstance(raw, dict):
        raise SpecSyntaxError("a routine document must be a mapping at the top level")
    locator = _Locator(text)
    try:
        spec = RoutineSpec.model_validate(normalize_document(raw))
    except ValidationError as exc:
        raise _validation_error(exc, (), locator)
    spec = _Resolver(spec, locator).run()
    logger.debug(f"Parsed routine: {spec.summary()}")
    return spec


def parse_spec_file(path) -> RoutineSpec:
    path = Path(path)
    fmt = "json" if path.suffix.lower() == ".json" else "yaml"
    return parse_spec(path.read_text(encoding="utf-8"), fmt=fmt)


def dump_spec(spec: RoutineSpec, fmt: str = "yaml") -> str:
    return spec.to_json() if fmt == "json" else spec.to_yaml()


def spec_equal(a: RoutineSpec, b: RoutineSpec) -> bool:
    return a.to_document() == b.to_document()

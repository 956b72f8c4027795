"""
Trainable maps used by routines.

A model exposes named methods ("embed", "classify", "encode", "decode")
and a flat dict of named parameter leaves. Routines only talk to models
through `forward(method, data, indices)`, so the lookup-table embedding and
the fully connected network are interchangeable.
"""
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..errors import (
    DataError,
    MissingMethodError,
    ShapeMismatchError,
    SpecValidationError,
    UnsupportedOperationError,
)
from .autodiff import ACTIVATIONS, DiffTensor, as_tensor, linear_layer, take

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
DEFAULT_HIDDEN = (100, 50)
DEFAULT_ACTIVATION = "softplus"


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def model_rng(seed: int) -> np.random.Generator:
    """Counter-based generator used for parameter initialisation."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed])))


class ModelHandle:
    """Common surface of every model."""

    kind = "base"
    in_dim: Optional[int] = None

    def __init__(self):
        self._params: Dict[str, DiffTensor] = {}

    # -- parameters --------------------------------------------------------

    def _add_param(self, name: str, values: np.ndarray) -> DiffTensor:
        param = DiffTensor(values, requires_grad=True, name=name)
        self._params[name] = param
        return param

    def parameters(self) -> Dict[str, DiffTensor]:
        return self._params

    def parameter_count(self) -> int:
        return int(sum(p.values.size for p in self._params.values()))

    def zero_grad(self) -> None:
        for param in self._params.values():
            param.zero_grad()

    # -- methods -----------------------------------------------------------

    @property
    def methods(self) -> tuple:
        raise NotImplementedError

    def has_method(self, name: str) -> bool:
        return name in self.methods

    def output_width(self, method: str) -> int:
        raise NotImplementedError

    def forward(self, method: str, data=None, indices: Optional[np.ndarray] = None) -> DiffTensor:
        raise NotImplementedError

    def apply(self, data: np.ndarray, method: str = "embed") -> np.ndarray:
        raise NotImplementedError

    def _require(self, method: str) -> None:
        if not self.has_method(method):
            raise MissingMethodError(f"{self.kind} model has no method '{method}' (available: {', '.join(self.methods)})")

    def descriptor(self) -> dict:
        raise NotImplementedError


class FullyConnectedModel(ModelHandle):
    """
    Shared trunk with one affine head per method.

    All heads hang off the last hidden layer; with no hidden layers every
    head is a single affine map of the input. A `decode` head mirrors the
    trunk from the embedding back to the input width, and `encode` is an
    alias of `embed`.
    """

    kind = "fully_connected"

    def __init__(self, in_dim: int, hidden: Sequence[int], out_dims: Dict[str, int],
                 activation: str = DEFAULT_ACTIVATION, seed: int = 0):
        super().__init__()
        if in_dim < 1 or any(w < 1 for w in hidden) or any(w < 1 for w in out_dims.values()):
            raise SpecValidationError("model widths must be positive")
        if activation not in ACTIVATIONS:
            raise SpecValidationError(f"unknown activation '{activation}'")
        out_dims = dict(out_dims)
        if "encode" in out_dims:
            out_dims.setdefault("embed", out_dims.pop("encode"))
        if "embed" not in out_dims:
            raise SpecValidationError("model needs an 'embed' head")
        if "decode" in out_dims and out_dims["decode"] != in_dim:
            raise SpecValidationError(f"decode width {out_dims['decode']} must equal the input width {in_dim}")

        self.in_dim = in_dim
        self.hidden = list(hidden)
        self.out_dims = out_dims
        self.activation = activation
        self.seed = seed
        self._act = ACTIVATIONS[activation]

        rng = model_rng(seed)
        widths = [in_dim] + self.hidden
        self._trunk = []
        for k, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            weight = self._add_param(f"trunk.{k}.weight", glorot_uniform(rng, fan_in, fan_out))
            bias = self._add_param(f"trunk.{k}.bias", np.zeros(fan_out))
            self._trunk.append((weight, bias))

        self._heads = {}
        for name, width in out_dims.items():
            if name == "decode":
                continue
            weight = self._add_param(f"head.{name}.weight", glorot_uniform(rng, widths[-1], width))
            bias = self._add_param(f"head.{name}.bias", np.zeros(width))
            self._heads[name] = (weight, bias)

        self._decoder = []
        if "decode" in out_dims:
            dec_widths = [out_dims["embed"]] + self.hidden[::-1] + [in_dim]
            for k, (fan_in, fan_out) in enumerate(zip(dec_widths[:-1], dec_widths[1:])):
                weight = self._add_param(f"decoder.{k}.weight", glorot_uniform(rng, fan_in, fan_out))
                bias = self._add_param(f"decoder.{k}.bias", np.zeros(fan_out))
                self._decoder.append((weight, bias))

    @property
    def methods(self) -> tuple:
        names = list(self._heads)
        if "embed" in names:
            names.append("encode")
        if self._decoder:
            names.append("decode")
        return tuple(names)

    def output_width(self, method: str) -> int:
        self._require(method)
        if method == "encode":
            return self.out_dims["embed"]
        return self.out_dims[method]

    def input_width(self, method: str) -> int:
        return self.out_dims["embed"] if method == "decode" else self.in_dim

    def _trunk_forward(self, x: DiffTensor) -> DiffTensor:
        for weight, bias in self._trunk:
            x = self._act(linear_layer(x, weight, bias))
        return x

    def forward(self, method: str, data=None, indices: Optional[np.ndarray] = None) -> DiffTensor:
        self._require(method)
        x = as_tensor(data)
        expected = self.input_width(method)
        if x.ndim != 2 or x.shape[1] != expected:
            raise ShapeMismatchError(f"method '{method}' expects width {expected}, got shape {x.shape}")
        if method == "decode":
            layers = self._decoder
            for k, (weight, bias) in enumerate(layers):
                x = linear_layer(x, weight, bias)
                if k < len(layers) - 1:
                    x = self._act(x)
            return x
        head = "embed" if method == "encode" else method
        weight, bias = self._heads[head]
        return linear_layer(self._trunk_forward(x), weight, bias)

    def apply(self, data: np.ndarray, method: str = "embed") -> np.ndarray:
        data = np.asarray(data, dtype=np.float64)
        return self.forward(method, data).values.copy()

    def descriptor(self) -> dict:
        return {
            "in_dim": self.in_dim,
            "hidden": self.hidden,
            "out_dims": self.out_dims,
            "activation": self.activation,
            "seed": self.seed,
        }


class DirectEmbedding(ModelHandle):
    """Lookup table of free coordinates, one row per item."""

    kind = "direct"

    def __init__(self, n_items: int, dim: int = 2, seed: int = 0, init: Optional[np.ndarray] = None,
                 init_scale: float = 1e-2):
        super().__init__()
        self.n_items = n_items
        self.dim = dim
        self.seed = seed
        if init is None:
            init = model_rng(seed).normal(0.0, init_scale, size=(n_items, dim))
        init = np.asarray(init, dtype=np.float64)
        if init.shape != (n_items, dim):
            raise ShapeMismatchError(f"initial coordinates must have shape {(n_items, dim)}, got {init.shape}")
        self.coords = self._add_param("coords", init)

    @property
    def methods(self) -> tuple:
        return ("embed",)

    def output_width(self, method: str) -> int:
        self._require(method)
        return self.dim

    def forward(self, method: str, data=None, indices: Optional[np.ndarray] = None) -> DiffTensor:
        self._require(method)
        if indices is None:
            raise UnsupportedOperationError("direct embedding needs item indices")
        return take(self.coords, np.asarray(indices, dtype=np.intp))

    def apply(self, data: np.ndarray, method: str = "embed") -> np.ndarray:
        raise UnsupportedOperationError("a direct embedding has no parametric map; it cannot embed new data")

    def embedding(self) -> np.ndarray:
        return self.coords.values.copy()

    def descriptor(self) -> dict:
        return {"n_items": self.n_items, "dim": self.dim, "seed": self.seed}


def build_default_model(in_dim: int, hidden: Sequence[int] = DEFAULT_HIDDEN,
                        out_dims: Optional[Dict[str, int]] = None,
                        activation: str = DEFAULT_ACTIVATION, seed: int = 0) -> FullyConnectedModel:
    out_dims = out_dims or {"embed": 2}
    model = FullyConnectedModel(in_dim, hidden, out_dims, activation=activation, seed=seed)
    logger.debug(f"Built {model.kind} model {model.descriptor()} with {model.parameter_count()} parameters")
    return model


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: ModelHandle, path) -> Path:
    """Write architecture + parameters as JSON (floats survive via repr)."""
    path = Path(path)
    payload = {
        "version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "descriptor": model.descriptor(),
        "parameters": {
            name: {"shape": list(p.shape), "values": p.values.ravel().tolist()}
            for name, p in model.parameters().items()
        },
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload))
    return path


def load_checkpoint(path) -> ModelHandle:
    """Rebuild a model from save_checkpoint output; malformed files raise DataError."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}")
    if not isinstance(payload, dict):
        raise DataError(f"checkpoint {path} is not a JSON object")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {payload.get('version')} in {path}")
    try:
        desc = payload["descriptor"]
        kind = payload["kind"]
        entries = payload["parameters"]
    except KeyError as exc:
        raise DataError(f"checkpoint {path} has no '{exc.args[0]}' entry")

    try:
        if kind == FullyConnectedModel.kind:
            model = FullyConnectedModel(desc["in_dim"], desc["hidden"], desc["out_dims"],
                                        activation=desc["activation"], seed=desc["seed"])
        elif kind == DirectEmbedding.kind:
            model = DirectEmbedding(desc["n_items"], desc["dim"], seed=desc["seed"])
        else:
            raise DataError(f"unknown model kind '{kind}' in checkpoint {path}")
    except (KeyError, TypeError, SpecValidationError) as exc:
        raise DataError(f"checkpoint {path} has a malformed descriptor: {exc}")

    params = model.parameters()
    missing = sorted(set(params) - set(entries))
    extra = sorted(set(entries) - set(params))
    if missing or extra:
        raise ShapeMismatchError(f"checkpoint {path} parameters do not match its descriptor "
                                 f"(missing {missing}, unexpected {extra})")
    for name, entry in entries.items():
        try:
            values = np.asarray(entry["values"], dtype=np.float64)
            shape = tuple(entry["shape"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"checkpoint parameter '{name}' is malformed: {exc}")
        if shape != params[name].shape or values.size != params[name].values.size:
            raise ShapeMismatchError(f"checkpoint parameter '{name}' has shape {entry['shape']}, "
                                     f"model expects {list(params[name].shape)}")
        params[name].values[...] = values.reshape(params[name].shape)
    return model


def parameter_snapshot(model: ModelHandle) -> Dict[str, np.ndarray]:
    return {name: p.values.copy() for name, p in model.parameters().items()}


def hidden_from_text(text: str) -> List[int]:
    """Parse '100,50' (or '' for a linear model) into layer widths."""
    text = str(text).strip().strip("[]()")
    if not text:
        return []
    return [int(part) for part in text.replace(" ", "").split(",") if part]

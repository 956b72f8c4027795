"""
A RoutineSpec bound to a model and a dataset.

compile_routine checks that every referenced data key and model method
exists and that widths line up. The Routine then computes derived data and
global relations on demand, builds samplers and optimizers for the phase
loop, and evaluates loss components on each batch.
"""
import logging
import warnings
from typing import Callable, Dict, Optional

import numpy as np

from . import registry
from .dataset import Dataset
from .errors import (
    CompileError,
    DimensionMismatchError,
    IncompatibleSamplerError,
    MissingDataKeyError,
    MissingMethodError,
)
from .services.autodiff import DiffTensor, take
from .services.losses import CorrelationResult
from .services.models import DirectEmbedding, ModelHandle
from .services.relations import BatchRelations, RelationMatrix, subset_for_batch
from .services.sampling import Batch, EdgeSampler, ItemSampler, triplets_from_edges
from .services.training import TrainingLog, train
from .spec import LossSpec, RelationRecipe, RoutineSpec, TrainingPhaseSpec

logger = logging.getLogger(__name__)

DEFAULT_NEIGHBORS = 15


def _warn(message: str) -> None:
    warnings.warn(message)
    logger.warning(message)


class Routine:
    def __init__(self, spec: RoutineSpec, model: ModelHandle, dataset: Dataset, seed: int = 0):
        self.spec = spec
        self.model = model
        self.dataset = dataset
        self.seed = seed
        self.global_relations: Dict[str, RelationMatrix] = {}
        self.optimizers: Dict[int, object] = {}
        self.log = TrainingLog()
        self._matrices: Dict[str, np.ndarray] = {}
        self._pending = set()
        self._prepared = False

    # -- data and relations -----------------------------------------------

    def _derived_entry(self, name: str):
        return next((d for d in self.spec.derived_data if d.name == name), None)

    def field(self, key: str) -> np.ndarray:
        if key in self.dataset:
            return self.dataset[key]
        entry = self._derived_entry(key)
        if entry is None:
            raise MissingDataKeyError(f"dataset has no field '{key}'")
        if key in self._pending:
            raise CompileError(f"derived data '{key}' depends on itself")
        self._pending.add(key)
        impl = registry.resolve("data_func", entry.data_func)
        inputs = [self.field(k) if source == "data" else self.global_relation(k) for source, k in entry.keys]
        self.dataset.add_field(key, impl(inputs, entry.opts))
        self._pending.discard(key)
        logger.info(f"Derived '{key}' with {entry.data_func} (width {self.dataset.width(key)})")
        return self.dataset[key]

    def matrix(self, key: str) -> np.ndarray:
        if key not in self._matrices:
            values = self.field(key)
            self._matrices[key] = values.reshape(len(values), -1).astype(np.float64)
        return self._matrices[key]

    def _default_neighbors(self, recipe: RelationRecipe) -> int:
        n = self.dataset.n_items
        if recipe.transforms:
            first = recipe.transforms[0]
            if first.transform_type == "perplexity":
                return max(1, min(n - 1, int(3 * first.opts.perplexity)))
            if first.transform_type == "connect" and first.opts.n_neighbors:
                return first.opts.n_neighbors
        return DEFAULT_NEIGHBORS

    def global_relation(self, name: str) -> RelationMatrix:
        if name in self.global_relations:
            return self.global_relations[name]
        recipe = self.spec.relation(name)
        impl = registry.resolve("relation", recipe.rel_type)
        data = self.field(recipe.data_key)
        if data.ndim == 2 or recipe.rel_type != "pairwise_eq":
            data = self.matrix(recipe.data_key)
        rel = impl.compute_global(data, recipe.opts, default_k=self._default_neighbors(recipe))
        for transform in recipe.transforms:
            rel = registry.resolve("transform", transform.transform_type).apply_global(rel, transform.opts)
        self.global_relations[name] = rel
        logger.info(f"Global relation '{name}': {rel.form} over {rel.n} items, {rel.nnz} non-zero entries")
        return rel

    def batch_relation(self, recipe: RelationRecipe, output: DiffTensor, edges=None,
                       indices: Optional[np.ndarray] = None) -> BatchRelations:
        impl = registry.resolve("relation", recipe.rel_type)
        rel = impl.compute_batch(output, recipe.opts, edges=edges, indices=indices)
        for transform in recipe.transforms:
            rel = registry.resolve("transform", transform.transform_type).apply_batch(rel, transform.opts)
        return rel

    def prepare(self) -> None:
        """Populate derived data and global relations before the first phase."""
        if self._prepared:
            return
        for entry in self.spec.derived_data:
            self.field(entry.name)
        for recipe in self.spec.relations:
            if recipe.level == "global":
                self.global_relation(recipe.name)
        self._prepared = True

    # -- phase components --------------------------------------------------

    def build_sampler(self, phase: TrainingPhaseSpec):
        opts = phase.sampling.opts
        if phase.sampling.type == "edge":
            return EdgeSampler(self.global_relation(opts.rels), opts.batch_size, opts.rate, opts.n_batches)
        return ItemSampler(self.dataset.n_items, opts.batch_size)

    def build_optimizer(self, phase: TrainingPhaseSpec):
        optimizer_cls = registry.resolve("optimizer", phase.optimizer.type)
        return optimizer_cls(self.model.parameters(), phase.optimizer.opts)

    def component_values(self, phase: TrainingPhaseSpec, batch: Batch) -> Dict[str, DiffTensor]:
        outputs: Dict[tuple, DiffTensor] = {}

        def run(method: str, key: str) -> DiffTensor:
            if (method, key) not in outputs:
                data = None if isinstance(self.model, DirectEmbedding) else self.matrix(key)[batch.indices]
                outputs[(method, key)] = self.model.forward(method, data, batch.indices)
            return outputs[(method, key)]

        values = {}
        for name in phase.loss.components:
            if name not in values:
                values[name] = self._evaluate(self.spec.loss(name), phase, batch, run)
        return values

    def _evaluate(self, loss: LossSpec, phase: TrainingPhaseSpec, batch: Batch, run: Callable) -> DiffTensor:
        impl = registry.resolve("loss_func", loss.func)
        keys = loss.keys
        idx = batch.indices

        if loss.loss_type == "relation":
            global_name, batch_name = keys.rels
            glob = self.global_relation(global_name)
            recipe = self.spec.relation(batch_name)
            out = run(keys.methods[0], keys.data[0])
            sampled = phase.sampling.type == "edge" and phase.sampling.opts.rels == global_name
            if sampled and batch.edges is not None:
                edges = batch.edges
                q = self.batch_relation(recipe, out, edges=(batch.positions(edges.heads), batch.positions(edges.tails)),
                                        indices=idx)
                p = np.where(edges.negative, 0.0, glob.values_at(edges.heads, edges.tails))
                return impl.relation(p, q, loss.opts, scale=glob.scale)
            if batch.size < 2:
                return DiffTensor(0.0)
            p, degenerate = subset_for_batch(glob, idx)
            if degenerate:
                _warn(f"loss '{loss.name}': batch holds no mass of relation '{global_name}'; component skipped")
                return DiffTensor(0.0)
            q = self.batch_relation(recipe, out, indices=idx)
            return impl.relation(p, q, loss.opts, scale=glob.scale)

        if loss.loss_type == "classification":
            logits = run(keys.methods[0], keys.data[0])
            return impl.classify(logits, self.field(keys.data[1])[idx], loss.opts)

        if loss.loss_type == "reconstruction":
            encoded = run(keys.methods[0], keys.data[0])
            decoded = self.model.forward(keys.methods[1], encoded, idx)
            return impl.compare(self.matrix(keys.data[0])[idx], decoded, loss.opts)

        if loss.loss_type == "position":
            out = run(keys.methods[0], keys.data[0])
            target = self.matrix(keys.data[1])[idx]
            if loss.func == "corr" and batch.size < 3:
                return DiffTensor(1.0)
            result = impl.compare(target, out, loss.opts)
            if isinstance(result, CorrelationResult):
                if result.degenerate:
                    _warn(f"loss '{loss.name}': attribute column is constant in this batch")
                return result.loss
            return result

        # triplet
        triplets = batch.triplets if batch.triplets is not None else triplets_from_edges(batch)
        out = run(keys.methods[0], keys.data[0])
        anchors, positives, negatives = (take(out, batch.positions(triplets[:, k])) for k in range(3))
        return impl.triplet(anchors, positives, negatives, loss.opts)

    # -- training and inference -------------------------------------------

    def train(self, progress: Optional[bool] = None, on_epoch=None):
        return train(self, progress=progress, on_epoch=on_epoch)

    def apply(self, data: np.ndarray, method: str = "embed") -> np.ndarray:
        return self.model.apply(data, method)

    def input_key(self) -> str:
        for loss in self.spec.losses:
            if "embed" in loss.keys.methods or "encode" in loss.keys.methods:
                return loss.keys.data[0]
        return "main"

    def embedding(self) -> np.ndarray:
        """Embedding of every training item."""
        if isinstance(self.model, DirectEmbedding):
            return self.model.embedding()
        return self.model.apply(self.matrix(self.input_key()), "embed")

    def predicted_labels(self) -> Optional[np.ndarray]:
        if not self.model.has_method("classify") or isinstance(self.model, DirectEmbedding):
            return None
        logits = self.model.apply(self.matrix(self.input_key()), "classify")
        return np.argmax(logits, axis=1)


def _known_keys(spec: RoutineSpec, dataset: Dataset) -> set:
    return set(dataset.keys()) | {d.name for d in spec.derived_data}


def _used_data_keys(loss: LossSpec) -> list:
    keys = loss.keys.data
    if loss.loss_type in ("relation", "reconstruction", "triplet"):
        return keys[:1]
    return keys[:2]


def compile_routine(spec: RoutineSpec, model: ModelHandle, dataset: Dataset, seed: int = 0) -> Routine:
    """
    Bind a parsed spec to a model and a dataset. Nothing is trained.

    Raises:
        MissingDataKeyError, MissingMethodError, DimensionMismatchError,
        IncompatibleSamplerError
    """
    known = _known_keys(spec, dataset)
    direct = isinstance(model, DirectEmbedding)
    derived_widths = {d.name: getattr(d.opts, "dim", None) for d in spec.derived_data}

    def width(key: str) -> Optional[int]:
        return dataset.width(key) if key in dataset else derived_widths.get(key)

    def require_key(key: str, where: str) -> None:
        if key not in known:
            raise MissingDataKeyError(f"{where} uses data key '{key}', which the dataset does not contain")

    for recipe in spec.relations:
        if recipe.level == "global":
            require_key(recipe.data_key, f"relation '{recipe.name}'")
    for entry in spec.derived_data:
        for source, key in entry.keys:
            if source == "data":
                require_key(key, f"derived data '{entry.name}'")

    if direct and model.n_items != dataset.n_items:
        raise DimensionMismatchError(f"direct embedding holds {model.n_items} items, dataset has {dataset.n_items}")

    for loss in spec.losses:
        for key in _used_data_keys(loss):
            require_key(key, f"loss '{loss.name}'")
        for method in loss.keys.methods:
            if not model.has_method(method):
                raise MissingMethodError(f"loss '{loss.name}' needs model method '{method}'")
        input_key = loss.keys.data[0]
        if not direct and loss.keys.methods[0] != "decode" and width(input_key) != model.in_dim:
            raise DimensionMismatchError(
                f"loss '{loss.name}': model input width {model.in_dim} differs from '{input_key}' width {width(input_key)}")
        if loss.loss_type == "position" and loss.func != "corr":
            target_width, out_width = width(loss.keys.data[1]), model.output_width(loss.keys.methods[0])
            if target_width is not None and target_width != out_width:
                raise DimensionMismatchError(
                    f"loss '{loss.name}': target '{loss.keys.data[1]}' width {target_width} differs from "
                    f"'{loss.keys.methods[0]}' output width {out_width}")
        if loss.loss_type == "classification" and loss.keys.data[1] in dataset:
            labels = dataset[loss.keys.data[1]]
            n_classes = model.output_width(loss.keys.methods[0])
            if labels.size and int(labels.max()) >= n_classes:
                raise DimensionMismatchError(
                    f"loss '{loss.name}': labels go up to {int(labels.max())} but '{loss.keys.methods[0]}' "
                    f"has {n_classes} outputs")

    for i, phase in enumerate(spec.training_phases):
        for name in phase.loss.components:
            if spec.loss(name).loss_type != "triplet":
                continue
            if phase.sampling.type != "edge" or phase.sampling.opts.rate < 1:
                raise IncompatibleSamplerError(
                    f"phase {i}: triplet loss '{name}' needs edge sampling with rate >= 1")

    logger.debug(f"Compiled routine {spec.summary()} against {model.kind} model and {dataset.n_items} items")
    return Routine(spec, model, dataset, seed=seed)

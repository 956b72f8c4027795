"""
relembed command line.

Commands:
- run: train a routine (document or preset) and write its artifacts
- apply: forward a CSV through a saved model
- plot: SVG scatterplot of an embedding CSV
- eval: quality metrics of an embedding against its data
- presets list|show, spec check

Exit codes: 2 for document/usage errors, 3 for data errors, 4 when training
diverges.
"""
import functools
import logging
import sys
from pathlib import Path
from typing import Dict, Optional

import click
import numpy as np
import pandas as pd

from . import config, presets
from .dataset import Dataset, load_csv
from .errors import (
    CalibrationError,
    CompileError,
    CurveFitError,
    DataError,
    DimensionMismatchError,
    EigenSolverError,
    MissingDataKeyError,
    RegistryError,
    SpecError,
    TrainingError,
    UnsupportedOperationError,
)
from .routine import compile_routine
from .services import metrics, plotting
from .services.models import (
    DEFAULT_ACTIVATION,
    DirectEmbedding,
    FullyConnectedModel,
    hidden_from_text,
    load_checkpoint,
    save_checkpoint,
)
from .spec import RoutineSpec, dump_spec, parse_spec_file

logger = logging.getLogger(__name__)

EXIT_SPEC = 2
EXIT_DATA = 3
EXIT_TRAINING = 4


def exit_code(exc: Exception) -> Optional[int]:
    if isinstance(exc, (MissingDataKeyError, DimensionMismatchError)):
        return EXIT_DATA
    if isinstance(exc, (SpecError, CompileError, RegistryError, UnsupportedOperationError)):
        return EXIT_SPEC
    if isinstance(exc, (DataError, CalibrationError, EigenSolverError, CurveFitError)):
        return EXIT_DATA
    if isinstance(exc, TrainingError):
        return EXIT_TRAINING
    return None


def handle_errors(command):
    """Turn engine errors into a ✗ line on stderr and the matching exit code."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except Exception as exc:
            code = exit_code(exc)
            if code is None:
                raise
            click.echo(f"✗ {type(exc).__name__}: {exc}", err=True)
            sys.exit(code)

    return wrapper


def _schema(entries) -> Dict[str, str]:
    schema = {}
    for entry in entries:
        if "=" not in entry:
            raise DataError(f"schema entry '{entry}' must look like column=role")
        column, role = entry.split("=", 1)
        schema[column.strip()] = role.strip()
    return schema


def _load_data(data: Optional[str], source: Optional[str], source_options: Optional[str], schema) -> Dataset:
    if data:
        return load_csv(data, _schema(schema))
    if source:
        from relembed.services import datasets

        return datasets.load_source(source, **datasets.source_options(source_options))
    raise DataError("no data given: pass --data CSV or --source NAME")


def _spec_heads(spec: RoutineSpec) -> list:
    heads = ["embed"]
    for loss in spec.losses:
        for method in loss.keys.methods:
            head = "embed" if method == "encode" else method
            if head not in heads:
                heads.append(head)
    return heads


def build_model(heads, hidden, dataset: Dataset, dim: int = 2, direct: bool = False,
                activation: str = DEFAULT_ACTIVATION, seed: int = 0):
    """Model for `dataset`: classify width from the labels, decode width from the features."""
    if direct:
        return DirectEmbedding(dataset.n_items, dim, seed=seed)
    in_dim = dataset.width("main")
    out_dims = {}
    for head in heads:
        if head == "embed":
            out_dims["embed"] = dim
        elif head == "classify":
            if "labels" not in dataset:
                raise MissingDataKeyError("a classify head needs a 'labels' field")
            out_dims["classify"] = int(dataset["labels"].max()) + 1
        elif head == "decode":
            out_dims["decode"] = in_dim
        else:
            out_dims[head] = dim
    return FullyConnectedModel(in_dim, hidden, out_dims, activation=activation, seed=seed)


def embedding_frame(coords: np.ndarray, predicted: Optional[np.ndarray] = None) -> pd.DataFrame:
    frame = pd.DataFrame({"index": np.arange(len(coords))})
    names = ["x", "y"] + [f"d{k}" for k in range(2, coords.shape[1])]
    for name, column in zip(names, coords.T):
        frame[name] = column
    if predicted is not None:
        frame["predicted_label"] = predicted
    return frame


def _coords(frame: pd.DataFrame) -> np.ndarray:
    columns = [c for c in frame.columns if c in ("x", "y") or (c.startswith("d") and c[1:].isdigit())]
    if not columns:
        raise DataError("embedding CSV has no coordinate columns (x, y)")
    return frame[columns].to_numpy(dtype=np.float64)


@click.group()
@click.option("--log-level", default=config.LOG_LEVEL, show_default=True, help="Logging level")
def cli(log_level):
    """Declarative relation-based embeddings."""
    config.configure_logging(log_level.upper())


@cli.command()
@click.argument("spec_path", required=False, type=click.Path(exists=True, dir_okay=False))
@click.option("--preset", "preset_name", help="Run a named preset instead of a document")
@click.option("--set", "overrides", multiple=True, help="Preset knob override, knob=value (repeatable)")
@click.option("--data", type=click.Path(exists=True, dir_okay=False), help="Input CSV with a header row")
@click.option("--schema", multiple=True, help="Column role, column=feature|label|ignore (repeatable)")
@click.option("--source", help="Bundled data source instead of --data (diabetes, blobs, ...)")
@click.option("--source-options", help="Options of the data source, key=value,...")
@click.option("--seed", type=int, default=config.DEFAULT_SEED, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="out", show_default=True)
@click.option("--hidden", help="Hidden layer widths, e.g. 100,50 ('' for linear)")
@click.option("--dim", type=int, default=2, show_default=True, help="Embedding width")
@click.option("--direct", is_flag=True, help="Optimize free coordinates instead of a network")
@click.option("--checkpoint-every", type=int, default=0, help="Save the model every N epochs (0: only at the end)")
@click.option("--progress/--no-progress", default=config.SHOW_PROGRESS)
@handle_errors
def run(spec_path, preset_name, overrides, data, schema, source, source_options, seed, out_dir, hidden, dim,
        direct, checkpoint_every, progress):
    """Train a routine and write embedding, model, log and resolved document."""
    if bool(spec_path) == bool(preset_name):
        raise SpecError("give either a document path or --preset")
    if preset_name:
        knob_values = dict(presets.parse_override(text) for text in overrides)
        spec = presets.preset(preset_name, knob_values)
        model_opts = presets.model_options(preset_name, knob_values)
    else:
        if overrides:
            raise SpecError("--set only applies to presets")
        spec = parse_spec_file(spec_path)
        model_opts = {"hidden": [100, 50], "heads": _spec_heads(spec)}
    if hidden is not None:
        model_opts["hidden"] = hidden_from_text(hidden)

    dataset = _load_data(data, source, source_options, schema)
    model = build_model(model_opts["heads"], model_opts["hidden"], dataset, dim=dim, direct=direct, seed=seed)
    routine = compile_routine(spec, model, dataset, seed=seed)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "routine.yaml").write_text(dump_spec(spec), encoding="utf-8")

    epochs_done = [0]

    def on_epoch(phase_index, epoch):
        epochs_done[0] += 1
        if checkpoint_every and epochs_done[0] % checkpoint_every == 0:
            save_checkpoint(model, out / "checkpoints" / f"phase{phase_index}_epoch{epoch}.json")

    click.echo(f"Training {model.kind} model on {dataset.n_items} items: {spec.summary()}")
    try:
        routine.train(progress=progress, on_epoch=on_epoch)
    finally:
        routine.log.to_csv(out / "training_log.csv")

    coords = routine.embedding()
    embedding_frame(coords, routine.predicted_labels()).to_csv(out / "embedding.csv", index=False)
    save_checkpoint(model, out / "model.json")
    final = routine.log.rows[-1]["total"] if len(routine.log) else float("nan")
    click.echo(f"✓ Wrote {out / 'embedding.csv'} ({len(coords)} rows), final loss {final:.6g}")


@cli.command()
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--schema", multiple=True, help="Column role, column=feature|label|ignore (repeatable)")
@click.option("--method", default="embed", show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default="applied.csv", show_default=True)
@handle_errors
def apply(checkpoint, data, schema, method, out_path):
    """Forward-pass a CSV through a saved model."""
    model = load_checkpoint(checkpoint)
    dataset = load_csv(data, _schema(schema))
    if isinstance(model, DirectEmbedding):
        raise UnsupportedOperationError("a direct embedding has no parametric map; it cannot embed new data")
    features = dataset.matrix("main")
    if model.input_width(method) != features.shape[1]:
        raise DimensionMismatchError(
            f"model expects {model.input_width(method)} features, {data} has {features.shape[1]}")
    outputs = model.apply(features, method)
    if method == "classify":
        frame = pd.DataFrame(outputs, columns=[f"logit_{k}" for k in range(outputs.shape[1])])
        frame.insert(0, "index", np.arange(len(outputs)))
    else:
        frame = embedding_frame(outputs)
    frame.to_csv(out_path, index=False)
    click.echo(f"✓ Wrote {out_path} ({len(frame)} rows)")


@cli.command()
@click.argument("embedding_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--color-by", help="Column of the embedding CSV (or of --labels) used for colors")
@click.option("--labels", "labels_path", type=click.Path(exists=True, dir_okay=False),
              help="CSV holding the color column, row-aligned with the embedding")
@click.option("--title")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default="embedding.svg", show_default=True)
@handle_errors
def plot(embedding_csv, color_by, labels_path, title, out_path):
    """Render an embedding CSV as an SVG scatterplot."""
    frame = pd.read_csv(embedding_csv)
    if frame.empty:
        raise DataError(f"{embedding_csv} holds no points")
    colors = None
    if color_by or labels_path:
        source = pd.read_csv(labels_path) if labels_path else frame
        column = color_by or source.columns[-1]
        if column not in source.columns:
            raise DataError(f"color column '{column}' not found")
        colors = source[column].to_numpy()
    plotting.write_svg(out_path, _coords(frame), colors, title=title)
    click.echo(f"✓ Wrote {out_path}")


@cli.command(name="eval")
@click.argument("embedding_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--schema", multiple=True, help="Column role, column=feature|label|ignore (repeatable)")
@click.option("--logits", "logits_path", type=click.Path(exists=True, dir_okay=False),
              help="Logits CSV from `apply --method classify` for accuracy")
@click.option("-k", "k", type=int, default=metrics.DEFAULT_K, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default="metrics.csv", show_default=True)
@handle_errors
def eval_cmd(embedding_csv, data, schema, logits_path, k, out_path):
    """Stress, trustworthiness and (with labels) silhouette and accuracy of an embedding."""
    dataset = load_csv(data, _schema(schema))
    coords = _coords(pd.read_csv(embedding_csv))
    if len(coords) != dataset.n_items:
        raise DataError(f"embedding has {len(coords)} rows, data has {dataset.n_items}")
    labels = dataset["labels"] if "labels" in dataset else None
    logits = None
    if logits_path:
        logit_frame = pd.read_csv(logits_path)
        logits = logit_frame[[c for c in logit_frame.columns if c.startswith("logit_")]].to_numpy()
    row = metrics.evaluate(dataset.matrix("main"), coords, k=k, labels=labels, logits=logits)
    row = {"embedding": str(embedding_csv), **row}
    pd.DataFrame([row]).to_csv(out_path, index=False)
    for key, value in row.items():
        click.echo(f"  {key}: {value}")
    click.echo(f"✓ Wrote {out_path}")


@cli.group(name="presets")
def presets_group():
    """Shipped routines."""


@presets_group.command(name="list")
def presets_list():
    for name in presets.available():
        click.echo(f"{name}  (knobs: {', '.join(presets.knobs(name))})")


@presets_group.command(name="show")
@click.argument("name")
@click.option("--set", "overrides", multiple=True, help="Knob override, knob=value (repeatable)")
@click.option("--format", "fmt", type=click.Choice(["yaml", "json"]), default="yaml", show_default=True)
@handle_errors
def presets_show(name, overrides, fmt):
    knob_values = dict(presets.parse_override(text) for text in overrides)
    click.echo(dump_spec(presets.preset(name, knob_values), fmt=fmt), nl=False)


@cli.group(name="spec")
def spec_group():
    """Routine documents."""


@spec_group.command(name="check")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@handle_errors
def spec_check(path):
    """Parse a document and print its component counts."""
    spec = parse_spec_file(path)
    counts = ", ".join(f"{key}={value}" for key, value in spec.summary().items())
    click.echo(f"✓ {path}: {counts}")


if __name__ == "__main__":
    cli()

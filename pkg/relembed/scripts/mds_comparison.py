#!/usr/bin/env python3
"""
MDS Comparison

Trains the metric MDS routine on the 442 x 10 diabetes table with four
models (Linear, NL 10x2, NL 10x5x2, Direct) and two batch sizes, averages
the normalized stress over a few seeds and checks the expected orderings.

Usage:
    python relembed/scripts/mds_comparison.py
    python relembed/scripts/mds_comparison.py --epochs 100 --seeds 1
"""

import sys
import time
from pathlib import Path

# Add repository root to path for imports
sys.path.insert(0, str(Path(__file__).resolve().parents[2]))

import click
import pandas as pd
from tqdm import tqdm

from relembed.app import presets
from relembed.app.config import configure_logging
from relembed.app.routine import compile_routine
from relembed.app.services.metrics import embedding_stress
from relembed.app.services.models import DirectEmbedding, FullyConnectedModel
from relembed.services.datasets import diabetes

BATCH_SIZES = [10, 442]

# name -> hidden widths of the trunk; None is the lookup table
MODELS = {
    "Linear": [],
    "NL 10x2": [2],
    "NL 10x5x2": [5],
    "Direct": None,
}

# Tolerance for NL 10x5x2 against Direct at batch size 10
DIRECT_RATIO = 1.25


def build_model(name: str, n_items: int, in_dim: int, seed: int):
    hidden = MODELS[name]
    if hidden is None:
        return DirectEmbedding(n_items, 2, seed=seed)
    return FullyConnectedModel(in_dim, hidden, {"embed": 2}, seed=seed)


def run_grid(epochs: int, seeds: int) -> pd.DataFrame:
    dataset = diabetes()
    data = dataset["main"]
    rows = []

    jobs = [(name, batch, seed) for name in MODELS for batch in BATCH_SIZES for seed in range(seeds)]
    for name, batch, seed in tqdm(jobs, desc="MDS runs", unit="run"):
        spec = presets.preset("mds", {"batch": batch, "epochs": epochs})
        model = build_model(name, dataset.n_items, data.shape[1], seed)
        routine = compile_routine(spec, model, dataset, seed=seed)
        started = time.perf_counter()
        routine.train(progress=False)
        rows.append({
            "model": name,
            "batch": batch,
            "seed": seed,
            "stress": embedding_stress(data, routine.embedding()),
            "seconds": time.perf_counter() - started,
        })

    return pd.DataFrame(rows)


def check_orderings(results: pd.DataFrame) -> bool:
    means = results.groupby(["model", "batch"])["stress"].mean()
    passed = True

    print("\n" + "=" * 70)
    print("MEAN NORMALIZED STRESS")
    print("=" * 70)
    print(means.unstack("batch").round(4).to_string())
    print()

    for batch in BATCH_SIZES:
        linear, deep, direct = means[("Linear", batch)], means[("NL 10x5x2", batch)], means[("Direct", batch)]
        if deep <= linear:
            print(f"  ✓ batch {batch}: NL 10x5x2 ({deep:.4f}) <= Linear ({linear:.4f})")
        else:
            print(f"  ✗ batch {batch}: NL 10x5x2 ({deep:.4f}) > Linear ({linear:.4f})")
            passed = False
        if direct <= deep:
            print(f"  ✓ batch {batch}: Direct ({direct:.4f}) <= NL 10x5x2 ({deep:.4f})")
        else:
            print(f"  ✗ batch {batch}: Direct ({direct:.4f}) > NL 10x5x2 ({deep:.4f})")
            passed = False

    ratio = means[("NL 10x5x2", 10)] / means[("Direct", 10)]
    if ratio <= DIRECT_RATIO:
        print(f"  ✓ batch 10: NL 10x5x2 within {ratio:.3f}x of Direct")
    else:
        print(f"  ✗ batch 10: NL 10x5x2 is {ratio:.3f}x Direct (limit {DIRECT_RATIO}x)")
        passed = False

    return passed


@click.command()
@click.option("--epochs", default=500, show_default=True)
@click.option("--seeds", default=3, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write per-run stress as CSV.")
def main(epochs, seeds, out):
    configure_logging("WARNING")
    print("\n" + "=" * 70)
    print(f"MDS COMPARISON ({epochs} epochs, {seeds} seeds)")
    print("=" * 70)

    started = time.perf_counter()
    results = run_grid(epochs, seeds)
    if out:
        results.to_csv(out, index=False)
        print(f"  Wrote {len(results)} runs to {out}")

    passed = check_orderings(results)
    print(f"\n  Total time: {time.perf_counter() - started:.1f}s")
    print("=" * 70 + "\n")
    sys.exit(0 if passed else 1)


if __name__ == "__main__":
    main()

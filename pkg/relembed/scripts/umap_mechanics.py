#!/usr/bin/env python3
"""
UMAP Preset Mechanics

Checks the two preparation steps the UMAP preset relies on:
  1. connectivity calibration puts log2(n_neighbors) mass in every row
  2. the spectral layout already separates two clusters before training

Usage:
    python relembed/scripts/umap_mechanics.py
"""

import sys
from pathlib import Path

# Add repository root to path for imports
sys.path.insert(0, str(Path(__file__).resolve().parents[2]))

import click
import numpy as np
from scipy.spatial.distance import cdist

from relembed.app import presets
from relembed.app.config import configure_logging
from relembed.app.routine import compile_routine
from relembed.app.services.models import build_default_model
from relembed.app.services.relations import knn_relations
from relembed.app.services.transforms import connectivity_calibrate
from relembed.services.datasets import blobs

ROW_SUM_TOLERANCE = 1e-4
MIN_SEPARATION = 3.0


def check_row_sums(data: np.ndarray, n_neighbors: int) -> bool:
    print(f"\nConnectivity calibration (n_neighbors={n_neighbors})")
    print("-" * 70)
    result = connectivity_calibrate(knn_relations(data, n_neighbors), n_neighbors)
    sums = np.asarray(result.probabilities.values.sum(axis=1)).ravel()
    worst = float(np.abs(sums - np.log2(n_neighbors)).max())
    print(f"  Target row sum: {np.log2(n_neighbors):.6f}")
    print(f"  Worst deviation: {worst:.2e}")
    ok = worst <= ROW_SUM_TOLERANCE
    print(f"  {'✓' if ok else '✗'} every row within {ROW_SUM_TOLERANCE}")
    return ok


def check_spectral_layout(dataset, n_neighbors: int, seed: int) -> bool:
    print("\nSpectral layout before the main phase")
    print("-" * 70)
    spec = presets.preset("umap", {"n_neighbors": n_neighbors})
    model = build_default_model(dataset.width("main"), [100, 50], seed=seed)
    routine = compile_routine(spec, model, dataset, seed=seed)
    routine.prepare()

    layout = routine.field("spectral")
    labels = dataset["labels"]
    a, b = layout[labels == 0], layout[labels == 1]
    within = np.mean([cdist(a, a).mean(), cdist(b, b).mean()])
    between = cdist(a, b).mean()
    ratio = between / within if within > 0 else np.inf
    print(f"  Mean within-cluster distance:  {within:.4f}")
    print(f"  Mean between-cluster distance: {between:.4f}")
    ok = ratio >= MIN_SEPARATION
    print(f"  {'✓' if ok else '✗'} separation factor {ratio:.2f} (need >= {MIN_SEPARATION})")
    return ok


@click.command()
@click.option("--n-neighbors", default=15, show_default=True)
@click.option("--seed", default=0, show_default=True)
def main(n_neighbors, seed):
    configure_logging("WARNING")
    print("\n" + "=" * 70)
    print("UMAP PRESET MECHANICS")
    print("=" * 70)

    dataset = blobs(n_items=400, n_features=10, n_centers=2, seed=seed)
    results = [
        check_row_sums(dataset["main"], n_neighbors),
        check_spectral_layout(dataset, n_neighbors, seed),
    ]

    print("\n" + "=" * 70 + "\n")
    sys.exit(0 if all(results) else 1)


if __name__ == "__main__":
    main()

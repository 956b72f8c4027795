#!/usr/bin/env python3
"""
Triplet Supervision

Trains triplet-supervised t-SNE twice: once with the triplet term weighted
equal to the t-SNE term (R = 1) and once with the triplet term switched off
(R = inf). Supervision should push classes apart.

Usage:
    python relembed/scripts/triplet_supervision.py
"""

import sys
from pathlib import Path

# Add repository root to path for imports
sys.path.insert(0, str(Path(__file__).resolve().parents[2]))

import click
import numpy as np
from scipy.spatial.distance import pdist, squareform

from relembed.app import presets
from relembed.app.config import configure_logging
from relembed.app.routine import compile_routine
from relembed.app.services.models import build_default_model
from relembed.services.datasets import classification

# label -> loss weights [tsne, triplet]
RATIOS = {
    "R = 1": [1.0, 1.0],
    "R = inf": [1.0, 0.0],
}

MIN_SEPARATION = 2.0


def class_separation(embedding: np.ndarray, labels: np.ndarray) -> float:
    """Mean inter-class distance over mean intra-class distance."""
    dists = squareform(pdist(embedding))
    same = labels[:, None] == labels[None, :]
    off_diagonal = ~np.eye(len(labels), dtype=bool)
    return float(dists[~same].mean() / dists[same & off_diagonal].mean())


@click.command()
@click.option("--epochs", default=20, show_default=True)
@click.option("--n-items", default=1000, show_default=True)
@click.option("--seed", default=0, show_default=True)
def main(epochs, n_items, seed):
    configure_logging("WARNING")
    print("\n" + "=" * 70)
    print("TRIPLET SUPERVISION")
    print("=" * 70 + "\n")

    dataset = classification(n_items=n_items, n_features=20, n_classes=5, class_sep=1.0, seed=seed)
    labels = dataset["labels"]
    separation = {}

    for name, weights in RATIOS.items():
        spec = presets.preset("triplet_tsne", {"weights": weights, "epochs": epochs})
        model = build_default_model(dataset.width("main"), [100, 50], seed=seed)
        routine = compile_routine(spec, model, dataset, seed=seed)
        routine.train(progress=False)
        separation[name] = class_separation(routine.embedding(), labels)
        print(f"  {name:8s} inter/intra distance ratio: {separation[name]:.3f}")

    print()
    checks = [
        (separation["R = 1"] >= MIN_SEPARATION, f"R = 1 separates classes by >= {MIN_SEPARATION}x"),
        (separation["R = inf"] < separation["R = 1"], "unsupervised ratio below the supervised one"),
    ]
    for ok, label in checks:
        print(f"  {'✓' if ok else '✗'} {label}")

    print("=" * 70 + "\n")
    sys.exit(0 if all(ok for ok, _ in checks) else 1)


if __name__ == "__main__":
    main()

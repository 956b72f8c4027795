#!/usr/bin/env python3
"""
Parametric t-SNE Quality

600 points from three well separated 10-D Gaussians, perplexity 30, a
(100, 50) trunk, PCA pre-training and 200 embedding epochs. The embedding
must beat the PCA projection on trustworthiness and keep the clusters apart.

Usage:
    python relembed/scripts/tsne_quality.py
"""

import sys
import time
from pathlib import Path

# Add repository root to path for imports
sys.path.insert(0, str(Path(__file__).resolve().parents[2]))

import click

from relembed.app import presets
from relembed.app.config import configure_logging
from relembed.app.routine import compile_routine
from relembed.app.services.derived import pca
from relembed.app.services.metrics import silhouette, trustworthiness
from relembed.app.services.models import build_default_model
from relembed.services.datasets import blobs

K = 10
MIN_TRUSTWORTHINESS = 0.90
MIN_SILHOUETTE = 0.5


@click.command()
@click.option("--epochs", default=200, show_default=True)
@click.option("--seed", default=0, show_default=True)
def main(epochs, seed):
    configure_logging("WARNING")
    print("\n" + "=" * 70)
    print("PARAMETRIC T-SNE QUALITY")
    print("=" * 70)

    dataset = blobs(n_items=600, n_features=10, n_centers=3, seed=seed)
    data, labels = dataset["main"], dataset["labels"]

    spec = presets.preset("tsne", {"perplexity": 30, "epochs": epochs})
    model = build_default_model(data.shape[1], [100, 50], seed=seed)
    routine = compile_routine(spec, model, dataset, seed=seed)

    started = time.perf_counter()
    routine.train()
    elapsed = time.perf_counter() - started

    embedding = routine.embedding()
    trust = trustworthiness(data, embedding, K)
    baseline = trustworthiness(data, pca(data, 2), K)
    sil = silhouette(embedding, labels)

    print(f"\n  Trained in {elapsed:.1f}s")
    print(f"  Trustworthiness@{K}: {trust:.4f} (PCA baseline {baseline:.4f})")
    print(f"  Silhouette: {sil:.4f}\n")

    checks = [
        (trust >= MIN_TRUSTWORTHINESS, f"trustworthiness >= {MIN_TRUSTWORTHINESS}"),
        (trust > baseline, "trustworthiness above the PCA baseline"),
        (sil > MIN_SILHOUETTE, f"silhouette > {MIN_SILHOUETTE}"),
    ]
    for ok, label in checks:
        print(f"  {'✓' if ok else '✗'} {label}")

    print("=" * 70 + "\n")
    sys.exit(0 if all(ok for ok, _ in checks) else 1)


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""
Hybrid Embedding / Classification Sweep

Trains the hybrid preset (UMAP embedding + classifier on one trunk) on a
10-class 20-D set for several embedding weights w and reports held-out
accuracy and trustworthiness for each.

    w = 0     pure classifier
    w = 1     pure embedding (classifier head untrained)

Usage:
    python relembed/scripts/hybrid_sweep.py
    python relembed/scripts/hybrid_sweep.py --epochs 10 --out sweep.csv
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
from relembed.app.services.metrics import accuracy, trustworthiness
from relembed.app.services.models import build_default_model
from relembed.services.datasets import classification, train_test_split

WEIGHTS = [0.0, 0.5, 0.95, 1.0]
N_CLASSES = 10
K = 10

ACCURACY_SLACK = 0.02
ACCURACY_DROP = 0.10


def run_sweep(epochs: int, seed: int) -> pd.DataFrame:
    dataset = classification(n_items=4000, n_features=20, n_classes=N_CLASSES, seed=seed)
    train, test = train_test_split(dataset, 2000, seed=seed)
    rows = []

    for w in tqdm(WEIGHTS, desc="weights", unit="run"):
        spec = presets.preset("hybrid", {"w": w, "epochs": epochs})
        model = build_default_model(train.width("main"), [100, 50],
                                    out_dims={"embed": 2, "classify": N_CLASSES}, seed=seed)
        routine = compile_routine(spec, model, train, seed=seed)
        routine.train(progress=False)

        logits = model.apply(test["main"], "classify")
        rows.append({
            "w": w,
            "accuracy": accuracy(logits, test["labels"]),
            f"trustworthiness_{K}": trustworthiness(test["main"], model.apply(test["main"]), K),
        })

    return pd.DataFrame(rows).set_index("w")


def check_trend(results: pd.DataFrame) -> bool:
    acc = results["accuracy"]
    trust = results[f"trustworthiness_{K}"]
    checks = [
        (acc[0.5] >= acc[0.0] - ACCURACY_SLACK,
         f"accuracy at w=0.5 ({acc[0.5]:.3f}) within {ACCURACY_SLACK} of the pure classifier ({acc[0.0]:.3f})"),
        (acc[1.0] <= acc[0.5] - ACCURACY_DROP,
         f"accuracy at w=1 ({acc[1.0]:.3f}) at least {ACCURACY_DROP} below w=0.5"),
        (trust[0.0] <= trust[0.5] <= trust[0.95],
         "trustworthiness non-decreasing from w=0 to w=0.95"),
    ]
    for ok, label in checks:
        print(f"  {'✓' if ok else '✗'} {label}")
    return all(ok for ok, _ in checks)


@click.command()
@click.option("--epochs", default=20, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write the sweep table as CSV.")
def main(epochs, seed, out):
    configure_logging("WARNING")
    print("\n" + "=" * 70)
    print("HYBRID SWEEP")
    print("=" * 70)

    started = time.perf_counter()
    results = run_sweep(epochs, seed)
    print()
    print(results.round(4).to_string())
    print()
    if out:
        results.to_csv(out)
        print(f"  Wrote sweep to {out}")

    passed = check_trend(results)
    print(f"\n  Total time: {time.perf_counter() - started:.1f}s")
    print("=" * 70 + "\n")
    sys.exit(0 if passed else 1)


if __name__ == "__main__":
    main()

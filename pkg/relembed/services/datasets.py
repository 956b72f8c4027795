"""
Bundled and synthetic data sources.

Every loader returns a Dataset with "main" features and, when the source
has classes, integer "labels". Synthetic sources take a seed and are
reproducible.
"""
import logging
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd
import yaml
from sklearn.datasets import load_diabetes, make_blobs, make_classification

from relembed.app.dataset import Dataset
from relembed.app.errors import DataError

logger = logging.getLogger(__name__)

# Column names of the covertype-like table (the ten numeric attributes of the forest cover survey)
COVERTYPE_COLUMNS = [
    "elevation",
    "aspect",
    "slope",
    "horizontal_distance_to_hydrology",
    "vertical_distance_to_hydrology",
    "horizontal_distance_to_roadways",
    "hillshade_9am",
    "hillshade_noon",
    "hillshade_3pm",
    "horizontal_distance_to_fire_points",
]

# Relative class frequencies (7 cover types, strongly unequal)
COVERTYPE_CLASS_WEIGHTS = [0.36, 0.30, 0.12, 0.08, 0.06, 0.05, 0.03]


def diabetes(standardize: bool = True) -> Dataset:
    """The 442 x 10 diabetes table shipped with scikit-learn."""
    bunch = load_diabetes()
    data = np.asarray(bunch.data, dtype=np.float64)
    if standardize:
        data = (data - data.mean(axis=0)) / data.std(axis=0)
    dataset = Dataset({"main": data}, feature_names=list(bunch.feature_names))
    logger.debug(f"Loaded diabetes table {data.shape}")
    return dataset


def blobs(n_items: int = 600, n_features: int = 10, n_centers: int = 3, cluster_std: float = 1.0,
          center_box: tuple = (-10.0, 10.0), seed: int = 0) -> Dataset:
    """Isotropic Gaussian clusters."""
    data, labels = make_blobs(n_samples=n_items, n_features=n_features, centers=n_centers,
                              cluster_std=cluster_std, center_box=center_box, random_state=seed)
    return Dataset({"main": data, "labels": labels.astype(np.int64)})


def classification(n_items: int = 4000, n_features: int = 20, n_classes: int = 10, n_informative: int = 12,
                   class_sep: float = 1.5, seed: int = 0) -> Dataset:
    """Multi-class set with informative and redundant features."""
    data, labels = make_classification(
        n_samples=n_items,
        n_features=n_features,
        n_informative=n_informative,
        n_redundant=min(4, n_features - n_informative),
        n_classes=n_classes,
        n_clusters_per_class=1,
        class_sep=class_sep,
        random_state=seed,
    )
    return Dataset({"main": data, "labels": labels.astype(np.int64)})


def covertype_like(n_items: int = 2000, seed: int = 0) -> Dataset:
    """
    Ten standardized terrain attributes with seven unequal classes.

    Classes differ mainly in elevation and distances; the three hillshade
    columns are smooth functions of aspect and slope plus noise, so
    hillshade_noon (column 8) varies continuously across classes.
    """
    rng = np.random.default_rng(seed)
    n_classes = len(COVERTYPE_CLASS_WEIGHTS)
    labels = rng.choice(n_classes, size=n_items, p=COVERTYPE_CLASS_WEIGHTS)

    elevation = 2500 + 150 * labels + rng.normal(0, 120, n_items)
    aspect = rng.uniform(0, 360, n_items)
    slope = np.abs(rng.normal(14 + 2 * (labels % 3), 6, n_items))
    hydro_h = np.abs(rng.normal(200 + 40 * labels, 120, n_items))
    hydro_v = 0.15 * hydro_h + rng.normal(0, 30, n_items)
    roads = np.abs(rng.normal(2000 + 300 * (n_classes - labels), 900, n_items))
    fire = np.abs(rng.normal(1800 + 250 * labels, 800, n_items))

    aspect_rad = np.deg2rad(aspect)
    slope_rad = np.deg2rad(slope)
    shade_9am = 210 + 35 * np.sin(aspect_rad) * np.sin(slope_rad) * 3 + rng.normal(0, 8, n_items)
    shade_noon = 220 - 60 * np.sin(slope_rad) * np.cos(aspect_rad) + rng.normal(0, 4, n_items)
    shade_3pm = 140 - 35 * np.sin(aspect_rad) * np.sin(slope_rad) * 3 + rng.normal(0, 8, n_items)

    frame = pd.DataFrame(dict(zip(COVERTYPE_COLUMNS, [
        elevation, aspect, slope, hydro_h, hydro_v, roads, shade_9am, shade_noon, shade_3pm, fire,
    ])))
    data = frame.to_numpy(dtype=np.float64)
    data = (data - data.mean(axis=0)) / data.std(axis=0)
    return Dataset({"main": data, "labels": labels.astype(np.int64)}, feature_names=list(COVERTYPE_COLUMNS))


def subset(dataset: Dataset, indices) -> Dataset:
    """Rows `indices` of every field."""
    indices = np.asarray(indices, dtype=np.intp)
    fields = {key: dataset[key][indices] for key in dataset.keys()}
    return Dataset(fields, feature_names=dataset.feature_names, label_names=dataset.label_names)


def train_test_split(dataset: Dataset, n_train: int, seed: int = 0):
    """Random disjoint train/test subsets."""
    if not 0 < n_train < dataset.n_items:
        raise DataError(f"n_train must lie in (0, {dataset.n_items})")
    order = np.random.default_rng(seed).permutation(dataset.n_items)
    return subset(dataset, np.sort(order[:n_train])), subset(dataset, np.sort(order[n_train:]))


SOURCES = {
    "diabetes": diabetes,
    "blobs": blobs,
    "classification": classification,
    "covertype_like": covertype_like,
}


def load_source(name: str, **options) -> Dataset:
    if name not in SOURCES:
        raise DataError(f"unknown data source '{name}' (available: {', '.join(sorted(SOURCES))})")
    try:
        return SOURCES[name](**options)
    except TypeError as exc:
        raise DataError(f"bad options for data source '{name}': {exc}")


def source_options(text: Optional[str]) -> Dict[str, Any]:
    """'n_items=500,cluster_std=0.5' -> {'n_items': 500, 'cluster_std': 0.5}"""
    options = {}
    for part in (text or "").split(","):
        if not part.strip():
            continue
        if "=" not in part:
            raise DataError(f"source option '{part.strip()}' must look like key=value")
        key, value = part.split("=", 1)
        try:
            options[key.strip()] = yaml.safe_load(value.strip())
        except yaml.YAMLError as exc:
            raise DataError(f"cannot parse source option '{part.strip()}': {exc}")
    return options

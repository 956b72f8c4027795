"""
Keyed, index-aligned data fields and their CSV persistence.

The main feature matrix lives under "main" and an optional label vector
under "labels". Derived fields (PCA scores, spectral layouts) are added
under their own names before training.
"""
import logging
import re
from pathlib import Path
from typing import Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from .errors import DataError, EmptyFeatureSetError, RaggedRowError, ShapeMismatchError, UnparseableCellError

logger = logging.getLogger(__name__)

ROLES = ("feature", "label", "ignore")
_LINE_PATTERN = re.compile(r"line (\d+)")


class Dataset:
    """Mapping key -> (n_items x width) matrix or n_items label vector."""

    def __init__(self, fields: Dict[str, np.ndarray], feature_names: Optional[List[str]] = None,
                 label_names: Optional[List[str]] = None):
        self._fields: Dict[str, np.ndarray] = {}
        self.n_items: Optional[int] = None
        for key, values in fields.items():
            self.add_field(key, values)
        self.feature_names = feature_names
        self.label_names = label_names

    @classmethod
    def from_arrays(cls, main: np.ndarray, labels: Optional[np.ndarray] = None, **extra) -> "Dataset":
        fields = {"main": main}
        if labels is not None:
            fields["labels"] = labels
        fields.update(extra)
        return cls(fields)

    def add_field(self, key: str, values) -> None:
        if key in self._fields:
            raise DataError(f"dataset already has a field '{key}'")
        values = np.array(values)
        if values.ndim not in (1, 2):
            raise ShapeMismatchError(f"field '{key}' must be a vector or a matrix, got shape {values.shape}")
        if self.n_items is None:
            self.n_items = len(values)
        elif len(values) != self.n_items:
            raise ShapeMismatchError(f"field '{key}' has {len(values)} rows, expected {self.n_items}")
        if values.ndim == 1 and np.issubdtype(values.dtype, np.integer):
            if values.size and values.min() < 0:
                raise DataError(f"label field '{key}' holds negative values")
        elif values.dtype != np.float64:
            values = values.astype(np.float64)
        values.setflags(write=False)
        self._fields[key] = values

    def __contains__(self, key: str) -> bool:
        return key in self._fields

    def __getitem__(self, key: str) -> np.ndarray:
        if key not in self._fields:
            raise KeyError(key)
        return self._fields[key]

    def keys(self) -> List[str]:
        return list(self._fields)

    def matrix(self, key: str) -> np.ndarray:
        """Field as a float matrix (vectors become one column)."""
        values = self[key]
        return values.reshape(len(values), -1).astype(np.float64)

    def width(self, key: str) -> int:
        values = self[key]
        return 1 if values.ndim == 1 else values.shape[1]

    def to_frame(self, keys: Optional[Iterable[str]] = None) -> pd.DataFrame:
        columns = {}
        for key in keys or self.keys():
            values = self[key]
            if values.ndim == 1:
                columns[key] = values
                continue
            names = self.feature_names if key == "main" and self.feature_names else \
                [f"{key}_{j}" for j in range(values.shape[1])]
            for name, column in zip(names, values.T):
                columns[name] = column
        return pd.DataFrame(columns)

    def export_csv(self, path, keys: Optional[Iterable[str]] = None) -> Path:
        path = Path(path)
        self.to_frame(keys).to_csv(path, index=False)
        return path


def _read_frame(path) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError:
        raise DataError(f"data file not found: {path}")
    except pd.errors.EmptyDataError:
        raise DataError(f"data file is empty: {path}")
    except pd.errors.ParserError as exc:
        match = _LINE_PATTERN.search(str(exc))
        # Header is line 1, so data row r sits on line r + 1
        row = int(match.group(1)) - 1 if match else -1
        raise RaggedRowError(row, str(exc).strip())
    short = frame.isna().any(axis=1).to_numpy()
    if short.any():
        row = int(np.argmax(short)) + 1
        raise RaggedRowError(row, "too few fields")
    return frame


def _numeric_column(frame: pd.DataFrame, column: str) -> np.ndarray:
    raw = frame[column]
    values = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=np.float64)
    bad = ~np.isfinite(values)
    if bad.any():
        row = int(np.argmax(bad))
        raise UnparseableCellError(row + 1, column, raw.iloc[row])
    return values


def _label_column(frame: pd.DataFrame, column: str):
    raw = frame[column]
    numeric = pd.to_numeric(raw, errors="coerce")
    if numeric.notna().all() and (numeric % 1 == 0).all() and (numeric >= 0).all():
        return numeric.to_numpy().astype(np.int64), None
    codes, uniques = pd.factorize(raw, sort=True)
    return codes.astype(np.int64), [str(u) for u in uniques]


def load_csv(path, schema: Optional[Dict[str, str]] = None) -> Dataset:
    """
    Read a CSV with a header row into a Dataset.

    Args:
        path: CSV file
        schema: column -> role ("feature", "label", "ignore"); columns not
            named default to "feature"

    Returns:
        Dataset with "main" (features, file order) and optional "labels"

    Raises:
        RaggedRowError, UnparseableCellError, EmptyFeatureSetError
    """
    schema = dict(schema or {})
    for column, role in schema.items():
        if role not in ROLES:
            raise DataError(f"unknown role '{role}' for column '{column}'")
    frame = _read_frame(path)
    unknown = [c for c in schema if c not in frame.columns]
    if unknown:
        raise DataError(f"columns not found in {path}: {', '.join(unknown)}")

    features = [c for c in frame.columns if schema.get(c, "feature") == "feature"]
    labels = [c for c in frame.columns if schema.get(c) == "label"]
    if not features:
        raise EmptyFeatureSetError(f"no feature columns left in {path}")
    if len(labels) > 1:
        raise DataError(f"at most one label column is supported, got {labels}")

    main = np.column_stack([_numeric_column(frame, c) for c in features]) if len(frame) else \
        np.zeros((0, len(features)))
    fields = {"main": main}
    label_names = None
    if labels:
        fields["labels"], label_names = _label_column(frame, labels[0])
    dataset = Dataset(fields, feature_names=features, label_names=label_names)
    logger.info(f"Loaded {dataset.n_items} items x {len(features)} features from {path}")
    return dataset

"""
Deterministic SVG scatterplots of 2-D embeddings.
"""
import logging
from html import escape
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..errors import DataError, ShapeMismatchError

logger = logging.getLogger(__name__)

CANVAS_SIZE = 600
MARGIN = 0.05
POINT_RADIUS = 3.0
DEFAULT_COLOR = "#1f77b4"

CATEGORICAL = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
]

# Anchors of a perceptually ordered ramp (dark purple -> yellow)
SEQUENTIAL = np.array([
    [68, 1, 84],
    [59, 82, 139],
    [33, 145, 140],
    [94, 201, 98],
    [253, 231, 37],
], dtype=np.float64)


def _hex(rgb) -> str:
    r, g, b = (int(round(c)) for c in rgb)
    return f"#{r:02x}{g:02x}{b:02x}"


def is_categorical(values) -> bool:
    values = np.asarray(values)
    return not np.issubdtype(values.dtype, np.floating) or bool(np.all(values == np.round(values)) and
                                                               len(np.unique(values)) <= len(CATEGORICAL))


def categorical_colors(values) -> list:
    _, codes = np.unique(np.asarray(values), return_inverse=True)
    return [CATEGORICAL[c % len(CATEGORICAL)] for c in codes.ravel()]


def sequential_colors(values) -> list:
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    t = np.zeros_like(values) if hi == lo else (values - lo) / (hi - lo)
    pos = t * (len(SEQUENTIAL) - 1)
    left = np.minimum(pos.astype(int), len(SEQUENTIAL) - 2)
    frac = (pos - left)[:, None]
    rgb = SEQUENTIAL[left] * (1 - frac) + SEQUENTIAL[left + 1] * frac
    return [_hex(c) for c in rgb]


def scatter_svg(coords: np.ndarray, color_values: Optional[Sequence] = None, title: Optional[str] = None,
                size: int = CANVAS_SIZE, radius: float = POINT_RADIUS) -> str:
    """
    Render points as SVG circles.

    The viewport is the data bounding box widened by 5% on every side and
    flipped so y grows upward. Labels get a categorical palette, continuous
    values a sequential ramp.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] < 2:
        raise ShapeMismatchError(f"scatterplots need at least two coordinate columns, got shape {coords.shape}")
    if len(coords) == 0:
        raise DataError("nothing to plot: the embedding is empty")
    xy = coords[:, :2]

    if color_values is None:
        colors = [DEFAULT_COLOR] * len(xy)
    else:
        color_values = np.asarray(color_values)
        if len(color_values) != len(xy):
            raise ShapeMismatchError(f"{len(color_values)} color values for {len(xy)} points")
        colors = categorical_colors(color_values) if is_categorical(color_values) else sequential_colors(color_values)

    lo, hi = xy.min(axis=0), xy.max(axis=0)
    extent = np.where(hi - lo > 0, hi - lo, 1.0)
    lo = lo - MARGIN * extent
    extent = extent * (1 + 2 * MARGIN)
    px = (xy[:, 0] - lo[0]) / extent[0] * size
    py = size - (xy[:, 1] - lo[1]) / extent[1] * size

    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    if title:
        lines.append(f'<title>{escape(title)}</title>')
    for x, y, color in zip(px, py, colors):
        lines.append(f'<circle cx="{x:.3f}" cy="{y:.3f}" r="{radius:g}" fill="{color}" fill-opacity="0.8"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def write_svg(path, coords: np.ndarray, color_values: Optional[Sequence] = None,
              title: Optional[str] = None) -> Path:
    path = Path(path)
    path.write_text(scatter_svg(coords, color_values, title=title), encoding="utf-8")
    logger.info(f"Wrote {len(coords)} points to {path}")
    return path

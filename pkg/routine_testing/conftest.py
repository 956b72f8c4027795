"""Shared helpers for the routine test suite."""
import sys
from pathlib import Path

import numpy as np
import pytest

# Repository root on the path so `relembed` imports without installation
sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from relembed.app.dataset import Dataset  # noqa: E402
from relembed.app.services.autodiff import DiffTensor  # noqa: E402

FD_STEP = 1e-6


def numeric_gradient(fn, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = fn(x)
        x[idx] = old - h
        down = fn(x)
        x[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def check_gradient(build, x, rtol: float = 1e-5, atol: float = 1e-7) -> None:
    """Compare the backward gradient of build(tensor) against finite differences."""
    x = np.array(x, dtype=np.float64)
    leaf = DiffTensor(x, requires_grad=True)
    build(leaf).backward()
    expected = numeric_gradient(lambda v: build(DiffTensor(v)).item(), x)
    scale = np.maximum(np.abs(expected), 1.0)
    error = np.abs(leaf.grad - expected) / scale
    assert np.all(error < rtol) or np.allclose(leaf.grad, expected, rtol=rtol, atol=atol), \
        f"max relative error {error.max():.3e}"


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture
def three_blobs():
    """90 points in three well separated 5-D clusters with labels."""
    gen = np.random.default_rng(0)
    centers = np.array([[0.0] * 5, [10.0] * 5, [-10.0, 10.0, -10.0, 10.0, -10.0]])
    labels = np.repeat(np.arange(3), 30)
    data = centers[labels] + gen.normal(0, 0.5, size=(90, 5))
    return Dataset({"main": data, "labels": labels})

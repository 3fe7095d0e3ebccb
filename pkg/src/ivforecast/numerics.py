"""Dense float64 helpers: shape-checked products, activations, seeded randomness.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import DimensionError

Rng = np.random.Generator


def tensor(values, shape=None) -> np.ndarray:
    """Build a validated float64 array (finite entries, optional reshape)."""
    arr = np.array(values, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise DimensionError(f"dimensions must be positive, got {shape}")
        if int(np.prod(shape)) != arr.size:
            raise DimensionError(f"{arr.size} values cannot fill shape {shape}")
        arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor values must be finite")
    return arr


def make_rng(seed: int) -> Rng:
    """Counter-based (Philox) generator; the same seed reproduces the same stream."""
    return np.random.Generator(np.random.Philox(int(seed) % 2**64))


def matvec(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if w.ndim != 2 or x.ndim != 1 or w.shape[1] != x.shape[0]:
        raise DimensionError(f"cannot multiply {w.shape} by {x.shape}")
    return w @ x


def sigmoid(x):
    return expit(np.asarray(x, dtype=np.float64))


def tanh(x):
    return np.tanh(np.asarray(x, dtype=np.float64))


def softmax(e, axis: int = -1) -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)
    if e.size == 0 or e.shape[axis] == 0:
        raise DimensionError("softmax of an empty vector")
    z = np.exp(e - np.max(e, axis=axis, keepdims=True))
    return z / np.sum(z, axis=axis, keepdims=True)


def bernoulli_mask(rng: Rng, n, p: float) -> np.ndarray:
    """0/1 float mask of shape ``n`` with each entry 1 with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"keep probability must lie in [0, 1], got {p}")
    return (rng.random(n) < p).astype(np.float64)

"""Small numeric kernels shared by the reasoning, scoring and training modules."""
from __future__ import annotations

import numpy as np


def sigmoid(x):
    """Overflow-safe logistic function; scalars in, float out."""
    arr = np.asarray(x, dtype=np.float64)
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ex = np.exp(arr[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def stable_softmax(x: np.ndarray) -> np.ndarray:
    """Softmax with max-shift; invariant to adding a constant to every input."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.size == 0:
        return np.zeros(0)
    ex = np.exp(arr - arr.max())
    return ex / ex.sum()


def leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def leaky_relu_grad(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, 1.0, slope)

"""Numpy implementations of the compiled kernels (used when the extension is absent)."""
import numpy as np


def contingency(a, b, na, nb):
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.shape != b.shape:
        raise ValueError("code vectors differ in length")
    if a.size and (a.min() < 0 or a.max() >= na or b.min() < 0 or b.max() >= nb):
        raise ValueError("code out of range")
    return np.bincount(a * nb + b, minlength=na * nb).reshape(na, nb).astype(np.int64)


def best_split(values, targets, min_leaf=1):
    values = np.asarray(values, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = values.shape[0]
    if n < 2:
        return -1.0, -1
    left = np.cumsum(targets[:-1])
    total = left[-1] + targets[-1] if n > 1 else targets[0]
    parent = total * total / n
    n_left = np.arange(1, n, dtype=np.float64)
    right = total - left
    gain = left * left / n_left + right * right / (n - n_left) - parent
    ok = values[:-1] != values[1:]
    ok &= (n_left >= min_leaf) & (n - n_left >= min_leaf)
    if not ok.any():
        return -1.0, -1
    gain = np.where(ok, gain, -np.inf)
    index = int(np.argmax(gain))
    if gain[index] <= -1.0:
        return -1.0, -1
    return float(gain[index]), index


def ks_statistic(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))

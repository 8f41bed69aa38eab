"""Plug-in information estimates and small statistical utilities."""
from __future__ import annotations

import math

import numpy as np
from scipy.stats import rankdata

from . import kernels
from .errors import InputError

DEFAULT_BINS = 20
TC_JITTER = 1e-10


def discretize(x, bins=DEFAULT_BINS):
    """Equal-width binning of each column over its observed [min, max].

    Returns int64 codes in [0, bins).  A constant column maps to bin 0.
    """
    x = np.asarray(x, dtype=np.float64)
    flat = x.ndim == 1
    x = x.reshape(len(x), -1)
    codes = np.zeros(x.shape, dtype=np.int64)
    for j in range(x.shape[1]):
        col = x[:, j]
        lo, hi = col.min(), col.max()
        if hi > lo:
            edges = np.linspace(lo, hi, bins + 1)
            codes[:, j] = np.clip(np.digitize(col, edges[1:-1]), 0, bins - 1)
    return codes[:, 0] if flat else codes


def _labels(y):
    """Map arbitrary discrete values to contiguous codes 0..k-1."""
    _, codes = np.unique(np.asarray(y), return_inverse=True)
    return codes.astype(np.int64).ravel()


def entropy(codes):
    """Plug-in entropy (nats) of a discrete sample."""
    counts = np.bincount(_labels(codes)).astype(np.float64)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def mutual_information_codes(a, b):
    """Plug-in MI (nats) between two discrete code vectors."""
    a, b = _labels(a), _labels(b)
    if a.shape != b.shape:
        raise InputError("inputs must have equal length")
    na, nb = int(a.max()) + 1, int(b.max()) + 1
    joint = kernels.contingency(a, b, na, nb).astype(np.float64)
    n = joint.sum()
    pa = joint.sum(axis=1, keepdims=True) / n
    pb = joint.sum(axis=0, keepdims=True) / n
    pj = joint / n
    nz = pj > 0
    mi = float((pj[nz] * (np.log(pj[nz]) - np.log((pa @ pb)[nz]))).sum())
    return max(mi, 0.0)


def discrete_mi(x_values, y_values, bins_x=DEFAULT_BINS):
    """MI between a continuous variable (binned) and a discrete one.

    Pass ``bins_x=None`` if ``x_values`` is already discrete.
    """
    x = np.asarray(x_values)
    y = np.asarray(y_values)
    if x.shape[0] != y.shape[0]:
        raise InputError("inputs must have equal length")
    codes = x if bins_x is None else discretize(np.asarray(x, dtype=np.float64), bins_x)
    return mutual_information_codes(codes, y)


def mi_matrix(codes, factors):
    """MI between every representation dimension (rows) and every factor (columns)."""
    codes = np.asarray(codes)
    factors = np.asarray(factors)
    out = np.zeros((codes.shape[1], factors.shape[1]))
    for i in range(codes.shape[1]):
        for k in range(factors.shape[1]):
            out[i, k] = mutual_information_codes(codes[:, i], factors[:, k])
    return out


def average_pairwise_mi(points, bins=DEFAULT_BINS):
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] < 2:
        raise InputError("average pairwise MI needs at least two dimensions")
    codes = discretize(points, bins)
    d = codes.shape[1]
    values = [mutual_information_codes(codes[:, i], codes[:, j])
              for i in range(d) for j in range(i + 1, d)]
    return float(np.mean(values))


def gaussian_total_correlation(points, return_info=False):
    """Total correlation (nats) of the Gaussian fitted to ``points``.

    TC = 1/2 (sum_j log S_jj - log det S).  A jitter of 1e-10 I is added to the
    covariance; ``info["near_singular"]`` flags inputs where it matters.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise InputError("points must be an (n, D) matrix")
    n, d = points.shape
    if d == 1:
        return (0.0, {"near_singular": False}) if return_info else 0.0
    if n <= d:
        raise InputError(f"need more samples ({n}) than dimensions ({d})")
    cov = np.cov(points, rowvar=False) + TC_JITTER * np.eye(d)
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0 or not np.isfinite(logdet):
        raise InputError("covariance is singular even after jitter")
    diag = np.diag(cov)
    tc = 0.5 * (float(np.log(diag).sum()) - float(logdet))
    std = np.sqrt(diag)
    corr_eigs = np.linalg.eigvalsh(cov / np.outer(std, std))
    info = {"near_singular": bool(corr_eigs.min() < 1e-8), "min_correlation_eigenvalue": float(corr_eigs.min())}
    tc = max(tc, 0.0) if abs(tc) < 1e-12 else tc
    return (tc, info) if return_info else tc


def spearman(a, b):
    """Spearman rank correlation with average ranks for ties; None if undefined."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise InputError("spearman expects two 1-d arrays of equal length")
    if a.size < 2:
        raise InputError("spearman needs at least two observations")
    ra = rankdata(a) - (a.size + 1) / 2.0
    rb = rankdata(b) - (b.size + 1) / 2.0
    denom = math.sqrt(float((ra * ra).sum()) * float((rb * rb).sum()))
    if denom == 0.0:
        return None
    return float(np.clip((ra * rb).sum() / denom, -1.0, 1.0))


def one_hot_design(levels):
    """Intercept plus one-hot columns for every level but the first (sorted)."""
    keys = [repr(l) for l in levels]
    uniques = sorted(set(keys))
    index = {k: i for i, k in enumerate(uniques)}
    design = np.zeros((len(keys), len(uniques)))
    design[:, 0] = 1.0
    for row, k in enumerate(keys):
        i = index[k]
        if i > 0:
            design[row, i] = 1.0
    return design, uniques


def ols_variance_explained(scores, categorical_predictors, return_details=False):
    """R^2 of an OLS fit of ``scores`` on a categorical predictor.

    ``categorical_predictors`` holds one level label per score; tuples act as
    the Cartesian product of several factors.
    """
    y = np.asarray(scores, dtype=np.float64)
    if y.ndim != 1 or len(categorical_predictors) != y.size:
        raise InputError("one predictor level per score is required")
    design, uniques = one_hot_design(categorical_predictors)
    if len(uniques) < 2:
        raise InputError("need at least two distinct predictor levels")
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    centered = y - y.mean()
    ss_tot = float(centered @ centered)
    ss_res = float(resid @ resid)
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    details = {"r2": r2, "rank_deficient": bool(rank < design.shape[1]),
               "levels": len(uniques), "n": int(y.size)}
    return details if return_details else r2


def ks_statistic(sample_a, sample_b):
    """Two-sample Kolmogorov-Smirnov distance."""
    a = np.sort(np.asarray(sample_a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(sample_b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise InputError("KS needs two non-empty samples")
    return float(kernels.ks_statistic_sorted(a, b))


def _mean_pairwise_distance(x, y, chunk=1024):
    total = 0.0
    for i in range(0, len(x), chunk):
        block = x[i:i + chunk]
        d2 = (block * block).sum(1)[:, None] + (y * y).sum(1)[None, :] - 2.0 * block @ y.T
        total += float(np.sqrt(np.maximum(d2, 0.0)).sum())
    return total / (len(x) * len(y))


def energy_distance(x, y):
    """Squared energy distance 2E|X-Y| - E|X-X'| - E|Y-Y'| (V-statistic)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    return (2.0 * _mean_pairwise_distance(x, y) - _mean_pairwise_distance(x, x)
            - _mean_pairwise_distance(y, y))

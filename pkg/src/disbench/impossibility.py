"""Measure-preserving entanglers for factorised priors.

For a prior with independent marginals, map each coordinate to a standard
normal through its CDF and the normal quantile, rotate with an orthogonal
matrix whose entries are all non-zero, and map back.  The result f is a
bijection with f(z) ~ z in law whose Jacobian is dense almost everywhere, so
a representation entangled by f is indistinguishable from the original one
given observations alone.

The orthogonal matrix is the Householder reflection I - 2 v v^T with
v = (sqrt(a), sqrt((1-a)/(d-1)), ..., sqrt((1-a)/(d-1))), a in (0, 1/2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import InputError
from . import stats

CDF_CLAMP = 1e-12

# Acklam's rational approximation to the normal quantile (rel. error < 1.15e-9).
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def _polyval(coeffs, x):
    out = np.zeros_like(x)
    for c in coeffs:
        out = out * x + c
    return out


def normal_cdf(x):
    return ndtr(np.asarray(x, dtype=np.float64))


def normal_pdf(x):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def normal_quantile(p):
    """Inverse standard-normal CDF on (0, 1): rational approximation + one Newton step."""
    p = np.asarray(p, dtype=np.float64)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise InputError("normal quantile is defined on the open interval (0, 1)")
    x = np.empty_like(p)
    low = p < _P_LOW
    high = p > 1.0 - _P_LOW
    mid = ~(low | high)
    if mid.any():
        q = p[mid] - 0.5
        r = q * q
        x[mid] = q * _polyval(_A, r) / (_polyval(_B, r) * r + 1.0)
    if low.any():
        q = np.sqrt(-2.0 * np.log(p[low]))
        x[low] = _polyval(_C, q) / (_polyval(_D, q) * q + 1.0)
    if high.any():
        q = np.sqrt(-2.0 * np.log1p(-p[high]))
        x[high] = -_polyval(_C, q) / (_polyval(_D, q) * q + 1.0)
    # Newton on Phi(x) = p; the upper tail works with 1 - p to keep precision.
    err = np.where(high, (1.0 - p) - ndtr(-x), ndtr(x) - p)
    return x - err / normal_pdf(x)


@dataclass(frozen=True)
class Marginal:
    """A 1-d distribution with a strictly increasing CDF on its support."""

    name: str

    def __post_init__(self):
        if self.name not in ("uniform", "normal"):
            raise InputError(f"unsupported marginal {self.name!r}")

    @property
    def support(self):
        return (0.0, 1.0) if self.name == "uniform" else (-math.inf, math.inf)

    def cdf(self, x):
        return np.asarray(x, dtype=np.float64) if self.name == "uniform" else normal_cdf(x)

    def quantile(self, u):
        return np.asarray(u, dtype=np.float64) if self.name == "uniform" else normal_quantile(u)

    def sample(self, n, rng):
        return rng.uniform(0.0, 1.0, n) if self.name == "uniform" else rng.standard_normal(n)

    def contains(self, x):
        lo, hi = self.support
        x = np.asarray(x)
        return np.isfinite(x) & (x >= lo) & (x <= hi)


def householder_vector(d, alpha):
    if d < 2:
        raise InputError("the entangler needs d >= 2")
    if not 0.0 < alpha < 0.5:
        raise InputError(f"alpha must lie in (0, 0.5), got {alpha}")
    v = np.full(d, math.sqrt((1.0 - alpha) / (d - 1)))
    v[0] = math.sqrt(alpha)
    return v


@dataclass(frozen=True, eq=False)
class HouseholderEntangler:
    dimension: int
    alpha: float
    v: np.ndarray
    matrix: np.ndarray
    marginals: tuple

    def forward(self, z):
        return apply(self, z, "forward")

    def inverse(self, z):
        return apply(self, z, "inverse")


def _resolve_marginals(marginals, d):
    if isinstance(marginals, (str, Marginal)):
        marginals = [marginals] * d
    out = tuple(m if isinstance(m, Marginal) else Marginal(m) for m in marginals)
    if len(out) != d:
        raise InputError(f"expected {d} marginals, got {len(out)}")
    return out


def build_entangler(d, alpha, marginals="uniform") -> HouseholderEntangler:
    v = householder_vector(d, alpha)
    matrix = np.eye(d) - 2.0 * np.outer(v, v)
    return HouseholderEntangler(int(d), float(alpha), v, matrix, _resolve_marginals(marginals, d))


def entangler_from_matrix(matrix, marginals="uniform") -> HouseholderEntangler:
    """Wrap an arbitrary square matrix (no orthogonality check; for controls)."""
    matrix = np.asarray(matrix, dtype=np.float64)
    d = matrix.shape[0]
    return HouseholderEntangler(d, float("nan"), np.full(d, np.nan), matrix,
                                _resolve_marginals(marginals, d))


def _check_support(entangler, z):
    for i, m in enumerate(entangler.marginals):
        if not np.all(m.contains(z[:, i])):
            raise InputError(f"coordinate {i} outside the support {m.support} of its marginal")


def apply(entangler: HouseholderEntangler, z, direction="forward"):
    """f(z) = g^-1(h^-1(A h(g(z)))) row-wise; the inverse uses A^T."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.shape[1] != entangler.dimension:
        raise InputError(f"expected points of dimension {entangler.dimension}")
    _check_support(entangler, z)
    if direction == "forward":
        matrix = entangler.matrix
    elif direction == "inverse":
        matrix = entangler.matrix.T
    else:
        raise InputError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    gauss = np.empty_like(z)
    for i, m in enumerate(entangler.marginals):
        u = np.clip(m.cdf(z[:, i]), CDF_CLAMP, 1.0 - CDF_CLAMP)
        gauss[:, i] = normal_quantile(u)
    mixed = gauss @ matrix.T
    out = np.empty_like(z)
    for i, m in enumerate(entangler.marginals):
        u = np.clip(normal_cdf(mixed[:, i]), CDF_CLAMP, 1.0 - CDF_CLAMP)
        out[:, i] = m.quantile(u)
    return out[0] if single else out


def empirical_jacobian(entangler: HouseholderEntangler, z, step=1e-5):
    """Central-difference Jacobian J[i, j] = d f_i / d z_j at a single point."""
    z = np.asarray(z, dtype=np.float64)
    d = entangler.dimension
    if z.shape != (d,):
        raise InputError(f"expected a single point of dimension {d}")
    if step <= 0:
        raise InputError("step must be positive")
    for i, m in enumerate(entangler.marginals):
        lo, hi = m.support
        if not (lo + step < z[i] < hi - step):
            raise InputError(f"coordinate {i} is within one step of the support boundary")
    offsets = np.eye(d) * step
    plus = apply(entangler, z + offsets)
    minus = apply(entangler, z - offsets)
    return ((plus - minus) / (2.0 * step)).T


def sample_prior(entangler, n, rng):
    return np.stack([m.sample(n, rng) for m in entangler.marginals], axis=1)


def marginal_invariance_report(entangler: HouseholderEntangler, n, rng, threshold=0.02):
    """Per-dimension two-sample KS distance between samples of z and f(z)."""
    if n < 1000:
        raise InputError("the invariance report needs n >= 1000")
    z = sample_prior(entangler, n, rng)
    fz = apply(entangler, z)
    ks = [float(stats.ks_statistic(z[:, i], fz[:, i])) for i in range(entangler.dimension)]
    return {
        "n": int(n),
        "dimension": entangler.dimension,
        "alpha": entangler.alpha,
        "ks": ks,
        "threshold": threshold,
        "passed": bool(max(ks) < threshold),
    }


def jacobian_summary(entangler, points, step=1e-5, floor=1e-6):
    """Smallest |J_ij| at each point and the fraction of points whose J is dense."""
    mins = np.array([np.abs(empirical_jacobian(entangler, p, step)).min() for p in points])
    return {"min_abs_entry": mins.tolist(), "dense_fraction": float(np.mean(mins > floor)),
            "floor": floor}

"""Hot inner loops, compiled when possible.

The Cython extension ``disbench._kernels`` is used if it was built; otherwise
the numpy versions in ``disbench._kernels_py`` are.  Setting the environment
variable ``DISBENCH_PURE_PYTHON=1`` forces the fallback.
"""
import os

import numpy as np

from . import _kernels_py

try:
    if os.environ.get("DISBENCH_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py


def backend(name=None):
    """Return a kernel namespace: ``"cython"``, ``"python"``, or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("the compiled kernels are not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def contingency(a, b, na, nb):
    return _impl.contingency(np.ascontiguousarray(a, dtype=np.int64),
                             np.ascontiguousarray(b, dtype=np.int64), int(na), int(nb))


def best_split(values, targets, min_leaf=1):
    return _impl.best_split(np.ascontiguousarray(values, dtype=np.float64),
                            np.ascontiguousarray(targets, dtype=np.float64), int(min_leaf))


def ks_statistic_sorted(a, b):
    return _impl.ks_statistic(np.ascontiguousarray(a, dtype=np.float64),
                              np.ascontiguousarray(b, dtype=np.float64))

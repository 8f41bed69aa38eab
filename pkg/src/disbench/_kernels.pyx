# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Semantics match disbench._kernels_py exactly."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def contingency(const cnp.int64_t[:] a, const cnp.int64_t[:] b, Py_ssize_t na, Py_ssize_t nb):
    """Joint count table of two integer code vectors."""
    cdef Py_ssize_t n = a.shape[0], i
    out = np.zeros((na, nb), dtype=np.int64)
    cdef cnp.int64_t[:, :] counts = out
    if b.shape[0] != n:
        raise ValueError("code vectors differ in length")
    for i in range(n):
        if a[i] < 0 or a[i] >= na or b[i] < 0 or b[i] >= nb:
            raise ValueError("code out of range")
        counts[a[i], b[i]] += 1
    return out


def best_split(const double[:] values, const double[:] targets, Py_ssize_t min_leaf=1):
    """Best variance-reduction split of targets ordered by ascending values.

    Returns (gain, index); the split puts positions [0, index] on the left.
    gain is the decrease in the sum of squared errors; (-1.0, -1) if no
    admissible split exists.  The first best position wins ties.
    """
    cdef Py_ssize_t n = values.shape[0], i, best_index = -1
    cdef double total = 0.0, left = 0.0, right, gain, best_gain = -1.0, parent
    for i in range(n):
        total += targets[i]
    parent = total * total / n
    for i in range(n - 1):
        left += targets[i]
        if i + 1 < min_leaf or n - i - 1 < min_leaf:
            continue
        if values[i] == values[i + 1]:
            continue
        right = total - left
        gain = left * left / (i + 1) + right * right / (n - i - 1) - parent
        if gain > best_gain:
            best_gain = gain
            best_index = i
    return best_gain, best_index


def ks_statistic(const double[:] a, const double[:] b):
    """Sup distance between the empirical CDFs of two ascending samples."""
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0], i = 0, j = 0
    cdef double best = 0.0, diff, x
    while i < na and j < nb:
        x = a[i] if a[i] <= b[j] else b[j]
        while i < na and a[i] == x:
            i += 1
        while j < nb and b[j] == x:
            j += 1
        diff = <double>i / na - <double>j / nb
        if diff < 0:
            diff = -diff
        if diff > best:
            best = diff
    return best

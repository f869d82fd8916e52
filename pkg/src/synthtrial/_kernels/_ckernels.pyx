# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled survival counting kernels (single pass over time-sorted data)."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def km_counts(times, events):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] t = np.ascontiguousarray(times, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] e = np.ascontiguousarray(events, dtype=np.int64)
    cdef Py_ssize_t n = t.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] order = np.argsort(t, kind="stable").astype(np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out_t = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out_r = np.empty(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out_d = np.empty(n, dtype=np.int64)
    cdef Py_ssize_t i = 0, j, k = 0
    cdef long long at_risk = n, d, removed
    cdef double cur
    while i < n:
        cur = t[order[i]]
        d = 0
        removed = 0
        j = i
        while j < n and t[order[j]] == cur:
            d += e[order[j]]
            removed += 1
            j += 1
        if d > 0:
            out_t[k] = cur
            out_r[k] = at_risk
            out_d[k] = d
            k += 1
        at_risk -= removed
        i = j
    return out_t[:k].copy(), out_r[:k].copy(), out_d[:k].copy()


def logrank_counts(times, events, group):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] t = np.ascontiguousarray(times, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] e = np.ascontiguousarray(events, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] g = np.ascontiguousarray(group, dtype=np.int64)
    cdef Py_ssize_t n = t.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] order = np.argsort(t, kind="stable").astype(np.int64)
    cdef Py_ssize_t i = 0, j, idx
    cdef double at_risk = n, at_risk1 = 0.0
    cdef double d, d1, c, c1, frac, cur
    cdef double observed = 0.0, expected = 0.0, var = 0.0, total = 0.0
    for i in range(n):
        at_risk1 += g[i]
    i = 0
    while i < n:
        cur = t[order[i]]
        d = 0.0
        d1 = 0.0
        c = 0.0
        c1 = 0.0
        j = i
        while j < n and t[order[j]] == cur:
            idx = order[j]
            d += e[idx]
            d1 += e[idx] * g[idx]
            c += 1.0
            c1 += g[idx]
            j += 1
        if d > 0:
            frac = at_risk1 / at_risk
            observed += d1
            total += d
            expected += d * frac
            if at_risk > 1:
                var += d * frac * (1.0 - frac) * (at_risk - d) / (at_risk - 1.0)
        at_risk -= c
        at_risk1 -= c1
        i = j
    return observed, expected, var, total


def concordance_counts(risk, times, events):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] r = np.ascontiguousarray(risk, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] t = np.ascontiguousarray(times, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] e = np.ascontiguousarray(events, dtype=np.int64)
    cdef Py_ssize_t n = t.shape[0]
    cdef Py_ssize_t i, j
    cdef double concordant = 0.0, tied = 0.0, comparable = 0.0
    for i in range(n):
        if e[i] != 1:
            continue
        for j in range(n):
            if t[j] > t[i]:
                comparable += 1.0
                if r[i] > r[j]:
                    concordant += 1.0
                elif r[i] == r[j]:
                    tied += 1.0
    return concordant, tied, comparable

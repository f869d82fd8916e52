"""Pure numpy implementations of the survival counting kernels.

Every function here has a compiled twin in ``_ckernels.pyx`` with the same
signature and return values; ``synthtrial._kernels`` picks one at import.
"""

from __future__ import annotations

import numpy as np


def _grouped(times: np.ndarray):
    order = np.argsort(times, kind="stable")
    uniq, inverse = np.unique(times[order], return_inverse=True)
    return order, uniq, inverse


def km_counts(times: np.ndarray, events: np.ndarray):
    """Distinct event times with their risk-set sizes and event counts."""
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=np.int64)
    n = times.shape[0]
    order, uniq, inverse = _grouped(times)
    removed = np.bincount(inverse, minlength=uniq.size)
    d = np.bincount(inverse, weights=events[order], minlength=uniq.size).astype(np.int64)
    at_risk = n - np.concatenate(([0], np.cumsum(removed)[:-1]))
    keep = d > 0
    return uniq[keep], at_risk[keep].astype(np.int64), d[keep]


def logrank_counts(times: np.ndarray, events: np.ndarray, group: np.ndarray):
    """Observed and expected events of group 1 plus hypergeometric variance.

    Returns ``(observed_1, expected_1, variance, observed_total)``.
    """
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=np.int64)
    group = np.asarray(group, dtype=np.int64)
    n = times.shape[0]
    n1 = int(group.sum())
    order, uniq, inverse = _grouped(times)
    ev = events[order]
    g = group[order]
    k = uniq.size
    d = np.bincount(inverse, weights=ev, minlength=k)
    d1 = np.bincount(inverse, weights=ev * g, minlength=k)
    c = np.bincount(inverse, minlength=k).astype(np.float64)
    c1 = np.bincount(inverse, weights=g, minlength=k)
    at_risk = n - np.concatenate(([0.0], np.cumsum(c)[:-1]))
    at_risk1 = n1 - np.concatenate(([0.0], np.cumsum(c1)[:-1]))
    mask = d > 0
    d, d1, at_risk, at_risk1 = d[mask], d1[mask], at_risk[mask], at_risk1[mask]
    frac = at_risk1 / at_risk
    expected = float(np.sum(d * frac))
    denom = np.where(at_risk > 1, at_risk - 1.0, 1.0)
    var_terms = np.where(at_risk > 1, d * frac * (1.0 - frac) * (at_risk - d) / denom, 0.0)
    return float(d1.sum()), expected, float(var_terms.sum()), float(d.sum())


def concordance_counts(risk: np.ndarray, times: np.ndarray, events: np.ndarray):
    """Harrell pair counts: (concordant, tied_in_risk, comparable).

    A pair (i, j) is comparable when ``times[i] < times[j]`` and subject i
    had the event.
    """
    risk = np.asarray(risk, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=np.int64)
    concordant = 0.0
    tied = 0.0
    comparable = 0.0
    for i in np.flatnonzero(events == 1):
        later = times > times[i]
        if not later.any():
            continue
        r = risk[later]
        comparable += r.size
        concordant += np.count_nonzero(risk[i] > r)
        tied += np.count_nonzero(risk[i] == r)
    return concordant, tied, comparable

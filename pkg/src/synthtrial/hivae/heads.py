"""Likelihood heads: per-feature densities and the two survival-time families.

Every ``*_loglik`` takes the raw head output as a Tensor and observed data as
plain arrays, and returns one log-density per row. Samplers work on the
numpy values of the same outputs.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln

from .. import nncore as nn
from ..dataset import CATEGORICAL, COUNT, POSITIVE, REAL

MIN_VARIANCE = 1e-6
MIN_RATE = 1e-8
MIN_WEIBULL = 1e-6
DENSITY_FLOOR = 1e-12
_LOG_2PI = math.log(2.0 * math.pi)


def head_width(kind: str, n_levels: int = 0) -> int:
    if kind in (REAL, POSITIVE):
        return 2
    if kind == COUNT:
        return 1
    if kind == CATEGORICAL:
        return n_levels
    raise ValueError(f"unknown head kind {kind!r}")


# -- feature heads ----------------------------------------------------------------


def gaussian_params(out: nn.Tensor):
    return out[:, 0], nn.softplus(out[:, 1]) + MIN_VARIANCE


def gaussian_loglik(out: nn.Tensor, z) -> nn.Tensor:
    """log N(z; mu, var) for standardized targets ``z``."""
    mu, var = gaussian_params(out)
    return -0.5 * (_LOG_2PI + nn.log(var)) - nn.square(z - mu) / (2.0 * var)


def normal_loglik(out, x, mean: float, scale: float) -> nn.Tensor:
    """Real feature: Gaussian on (x - mean) / scale, Jacobian included."""
    x = np.asarray(x, dtype=float)
    return gaussian_loglik(out, (x - mean) / scale) - math.log(scale)


def lognormal_loglik(out, x, mean: float, scale: float) -> nn.Tensor:
    """Positive feature: Gaussian on the standardized log, Jacobian included."""
    lx = np.log(np.asarray(x, dtype=float))
    return gaussian_loglik(out, (lx - mean) / scale) - math.log(scale) - lx


def poisson_rate(out: nn.Tensor) -> nn.Tensor:
    return nn.softplus(out[:, 0]) + MIN_RATE


def poisson_loglik(out, x) -> nn.Tensor:
    x = np.asarray(x, dtype=float)
    rate = poisson_rate(out)
    return x * nn.log(rate) - rate - gammaln(x + 1.0)


def categorical_loglik(out, codes) -> nn.Tensor:
    codes = np.asarray(codes, dtype=np.int64)
    return nn.log_softmax(out, axis=1)[np.arange(codes.size), codes]


def feature_loglik(kind: str, out, x, stats: dict) -> nn.Tensor:
    if kind == REAL:
        return normal_loglik(out, x, stats["mean"], stats["scale"])
    if kind == POSITIVE:
        return lognormal_loglik(out, x, stats["mean"], stats["scale"])
    if kind == COUNT:
        return poisson_loglik(out, x)
    if kind == CATEGORICAL:
        return categorical_loglik(out, x)
    raise ValueError(f"unknown head kind {kind!r}")


def sample_feature(kind: str, out: np.ndarray, stats: dict, rng: np.random.Generator) -> np.ndarray:
    n = out.shape[0]
    if kind in (REAL, POSITIVE):
        mu = out[:, 0]
        sd = np.sqrt(np.logaddexp(0.0, out[:, 1]) + MIN_VARIANCE)
        u = stats["mean"] + stats["scale"] * (mu + sd * rng.standard_normal(n))
        return u if kind == REAL else np.exp(u)
    if kind == COUNT:
        return rng.poisson(np.logaddexp(0.0, out[:, 0]) + MIN_RATE).astype(np.float64)
    if kind == CATEGORICAL:
        return sample_categorical(out, rng)
    raise ValueError(f"unknown head kind {kind!r}")


def sample_categorical(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Row-wise draws from softmax(logits) by inversion."""
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    cdf = np.cumsum(p, axis=1)
    u = rng.random(logits.shape[0]) * cdf[:, -1]
    return np.minimum((cdf < u[:, None]).sum(axis=1), logits.shape[1] - 1).astype(np.int64)


# -- Weibull survival head -------------------------------------------------------


def weibull_params(out: nn.Tensor):
    """(scale, shape), both strictly positive."""
    return nn.softplus(out[:, 0]) + MIN_WEIBULL, nn.softplus(out[:, 1]) + MIN_WEIBULL


def weibull_log_survival(t, scale, shape) -> nn.Tensor:
    log_ratio = np.log(np.asarray(t, dtype=float)) - nn.log(scale)
    return -nn.exp(shape * log_ratio)


def weibull_log_density(t, scale, shape) -> nn.Tensor:
    log_ratio = np.log(np.asarray(t, dtype=float)) - nn.log(scale)
    return nn.log(shape) - nn.log(scale) + (shape - 1.0) * log_ratio - nn.exp(shape * log_ratio)


def sample_weibull(out: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    scale = np.logaddexp(0.0, out[:, 0]) + MIN_WEIBULL
    shape = np.logaddexp(0.0, out[:, 1]) + MIN_WEIBULL
    u = rng.random(out.shape[0])
    u = np.maximum(u, np.finfo(float).tiny)
    # log-space with a cap so a near-zero shape cannot overflow to inf
    log_t = np.log(scale) + np.log(-np.log(u)) / shape
    return np.exp(np.clip(log_t, -700.0, 700.0))


# -- piecewise-constant density ----------------------------------------------------


def interval_edges(times, n_intervals: int, stretch: float = 1.05) -> np.ndarray:
    """Edges 0 < q_1 < ... < q_{K-1} < stretch * max(t) from empirical quantiles of ``times``.

    Duplicate quantiles (heavily tied times) are merged, so fewer than
    ``n_intervals`` intervals may come back.
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0 or np.any(times <= 0):
        raise ValueError("interval grid needs positive observed times")
    inner = np.quantile(times, np.arange(1, n_intervals) / n_intervals) if n_intervals > 1 else np.zeros(0)
    edges = np.unique(np.concatenate(([0.0], inner, [stretch * times.max()])))
    return edges[edges >= 0]


def piecewise_design(t, edges: np.ndarray):
    """Constant matrices mapping interval masses p to F(t) and f(t).

    Row i of ``cdf_w`` holds 1 for intervals wholly below t_i and the
    covered fraction for the interval containing t_i; ``dens_w`` holds
    1/width at that interval. Past the last edge F = 1 and f = 0.
    """
    t = np.asarray(t, dtype=float)
    k = edges.size - 1
    widths = np.diff(edges)
    idx = np.searchsorted(edges, t, side="right") - 1
    beyond = idx >= k
    idx_c = np.clip(idx, 0, k - 1)
    frac = np.clip((t - edges[idx_c]) / widths[idx_c], 0.0, 1.0)
    cols = np.arange(k)[None, :]
    cdf_w = (cols < idx_c[:, None]).astype(float)
    cdf_w[np.arange(t.size), idx_c] = frac
    dens_w = np.zeros((t.size, k))
    dens_w[np.arange(t.size), idx_c] = 1.0 / widths[idx_c]
    cdf_w[beyond] = 1.0
    dens_w[beyond] = 0.0
    return cdf_w, dens_w, beyond


def piecewise_log_terms(out: nn.Tensor, t, edges):
    """(log f(t), log S(t)) with both floored at 1e-12 beyond the last edge."""
    p = nn.softmax(out, axis=1)
    cdf_w, dens_w, _ = piecewise_design(t, edges)
    surv = (p * (1.0 - cdf_w)).sum(axis=1)
    dens = (p * dens_w).sum(axis=1)
    return nn.log(nn.maximum(dens, DENSITY_FLOOR)), nn.log(nn.maximum(surv, DENSITY_FLOOR))


def piecewise_survival(probs: np.ndarray, t, edges) -> np.ndarray:
    cdf_w, _, _ = piecewise_design(t, edges)
    return np.sum(probs * (1.0 - cdf_w), axis=1)


def sample_piecewise(out: np.ndarray, edges: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    k = sample_categorical(out, rng)
    u = rng.random(out.shape[0])
    return edges[k] + u * (edges[k + 1] - edges[k])


# -- censored pair likelihood --------------------------------------------------------


def censored_loglik(log_f_t, log_s_t, log_f_c, log_s_c, event) -> nn.Tensor:
    """delta * (log f_T + log S_C) + (1 - delta) * (log S_T + log f_C)."""
    d = np.asarray(event, dtype=float)
    return d * (log_f_t + log_s_c) + (1.0 - d) * (log_s_t + log_f_c)

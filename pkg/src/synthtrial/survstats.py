"""Classical survival statistics.

Kaplan-Meier, two-group log-rank, Benjamini-Hochberg, the Schoenfeld
power approximation, Breslow Cox regression, Harrell's C-index and the
IPCW integrated Brier score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Sequence

import numpy as np

from . import _kernels
from .dataset import TrialDataset

_NORMAL = NormalDist()


class CoxError(RuntimeError):
    pass


# -- Kaplan-Meier -------------------------------------------------------------


@dataclass(frozen=True)
class SurvivalCurve:
    event_times: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray
    survival: np.ndarray

    def __call__(self, t) -> np.ndarray:
        """Right-continuous S(t)."""
        idx = np.searchsorted(self.event_times, np.asarray(t, dtype=float), side="right")
        return np.concatenate(([1.0], self.survival))[idx]

    def left(self, t) -> np.ndarray:
        """Left limit S(t-)."""
        idx = np.searchsorted(self.event_times, np.asarray(t, dtype=float), side="left")
        return np.concatenate(([1.0], self.survival))[idx]


def kaplan_meier(times, events) -> SurvivalCurve:
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=np.int64)
    if times.size == 0:
        raise ValueError("Kaplan-Meier needs at least one subject")
    if np.any(times <= 0):
        raise ValueError("times must be positive")
    t, r, d = _kernels.km_counts(times, events)
    s = np.cumprod(1.0 - d / r)
    return SurvivalCurve(t, r, d, s)


# -- log-rank -----------------------------------------------------------------


def chi2_sf_1df(x: float) -> float:
    """Upper tail of the 1-df chi-square: P(Z^2 > x) = erfc(sqrt(x/2))."""
    return math.erfc(math.sqrt(max(x, 0.0) / 2.0))


@dataclass(frozen=True)
class LogRankResult:
    statistic: float
    p_value: float
    observed: tuple[float, float]
    expected: tuple[float, float]
    variance: float

    @property
    def z(self) -> float:
        """Standardized O - E for the first group (0 when the variance vanishes)."""
        if self.variance <= 0:
            return 0.0
        return (self.observed[0] - self.expected[0]) / math.sqrt(self.variance)


def logrank_test(g1, g2) -> LogRankResult:
    """Two-sample log-rank test; each group is a ``(times, events)`` pair."""
    t1, e1 = (np.asarray(a) for a in g1)
    t2, e2 = (np.asarray(a) for a in g2)
    if t1.size == 0 or t2.size == 0:
        raise ValueError("both groups must be nonempty")
    times = np.concatenate([t1, t2]).astype(np.float64)
    events = np.concatenate([e1, e2]).astype(np.int64)
    group = np.concatenate([np.ones(t1.size, np.int64), np.zeros(t2.size, np.int64)])
    o1, ex1, var, total = _kernels.logrank_counts(times, events, group)
    if var <= 0:
        return LogRankResult(0.0, 1.0, (o1, total - o1), (ex1, total - ex1), 0.0)
    stat = (o1 - ex1) ** 2 / var
    return LogRankResult(stat, chi2_sf_1df(stat), (o1, total - o1), (ex1, total - ex1), var)


def logrank_datasets(a: TrialDataset, b: TrialDataset) -> LogRankResult:
    return logrank_test((a.time, a.event), (b.time, b.event))


# -- multiple testing -----------------------------------------------------------


def benjamini_hochberg(p_values, q: float = 0.05) -> np.ndarray:
    """Step-up rejection flags at FDR level ``q``."""
    p = np.asarray(p_values, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    if m == 0:
        return np.zeros(0, dtype=bool)
    order = np.argsort(p, kind="stable")
    below = p[order] <= q * np.arange(1, m + 1) / m
    if not below.any():
        return np.zeros(m, dtype=bool)
    k = np.flatnonzero(below).max()
    return p <= p[order][k]


# -- Schoenfeld power -----------------------------------------------------------


@dataclass(frozen=True)
class PowerSpec:
    alpha: float
    effect: float
    ns_treated: float
    ns_control: float

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.ns_treated <= 0 or self.ns_control <= 0:
            raise ValueError("event counts must be positive")

    @property
    def sigma(self) -> float:
        return math.sqrt(1.0 / self.ns_treated + 1.0 / self.ns_control)


def schoenfeld_power(spec: PowerSpec) -> float:
    """Two-sided asymptotic log-rank power; equals ``alpha`` at zero effect."""
    z = _NORMAL.inv_cdf(1.0 - spec.alpha / 2.0)
    shift = abs(spec.effect) / spec.sigma
    return 1.0 - (_NORMAL.cdf(z - shift) - _NORMAL.cdf(-z - shift))


# -- Cox proportional hazards ------------------------------------------------


@dataclass
class CoxResult:
    coef: np.ndarray
    se: np.ndarray
    loglik: float
    gradient: np.ndarray
    iterations: int
    converged: bool
    baseline_times: np.ndarray
    baseline_cumhaz: np.ndarray
    names: list[str] = field(default_factory=list)

    def risk_score(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.coef.size)
        return X @ self.coef

    def cumulative_hazard(self, t) -> np.ndarray:
        idx = np.searchsorted(self.baseline_times, np.asarray(t, dtype=float), side="right")
        return np.concatenate(([0.0], self.baseline_cumhaz))[idx]

    def predict_survival(self, X, times) -> np.ndarray:
        """S(t | x) for each row of X (rows) and each time (columns)."""
        h0 = self.cumulative_hazard(times)
        return np.exp(-np.outer(np.exp(self.risk_score(X)), h0))


def _risk_set_ends(t_desc: np.ndarray) -> np.ndarray:
    # index of the last row tied with row i once sorted by decreasing time
    neg = -t_desc
    return np.searchsorted(neg, neg, side="right") - 1


def cox_partial_loglik(beta, X, times, events, with_derivatives: bool = True):
    """Breslow partial log-likelihood and optionally its gradient and Hessian."""
    beta = np.asarray(beta, dtype=float)
    X = np.asarray(X, dtype=float)
    order = np.argsort(-np.asarray(times, dtype=float), kind="stable")
    Xs = X[order]
    ts = np.asarray(times, dtype=float)[order]
    ds = np.asarray(events)[order] == 1
    ends = _risk_set_ends(ts)
    eta = Xs @ beta
    shift = eta.max() if eta.size else 0.0
    w = np.exp(eta - shift)
    s0 = np.cumsum(w)[ends]
    loglik = float(np.sum(eta[ds] - np.log(s0[ds]) - shift))
    if not with_derivatives:
        return loglik
    s1 = np.cumsum(w[:, None] * Xs, axis=0)[ends]
    s2 = np.cumsum(w[:, None, None] * Xs[:, :, None] * Xs[:, None, :], axis=0)[ends]
    m1 = s1[ds] / s0[ds, None]
    grad = np.sum(Xs[ds] - m1, axis=0)
    hess = -np.sum(s2[ds] / s0[ds, None, None] - m1[:, :, None] * m1[:, None, :], axis=0)
    return loglik, grad, hess


def _breslow_baseline(beta, X, times, events):
    eta = X @ beta if X.shape[1] else np.zeros(times.size)
    w = np.exp(eta)
    ev_times = np.unique(times[events == 1])
    order = np.argsort(times, kind="stable")
    ts = times[order]
    tail = np.concatenate((np.cumsum(w[order][::-1])[::-1], [0.0]))
    at_risk = tail[np.searchsorted(ts, ev_times, side="left")]
    d = np.array([np.sum((times == u) & (events == 1)) for u in ev_times], dtype=float)
    return ev_times, np.cumsum(d / at_risk)


def cox_fit_arrays(X, times, events, names: Sequence[str] | None = None, max_iter: int = 100, tol: float = 1e-8) -> CoxResult:
    """Newton-Raphson with step halving on the Breslow partial likelihood."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=np.int64)
    X = np.asarray(X, dtype=float).reshape(times.size, -1)
    p = X.shape[1]
    if events.sum() < 1:
        raise CoxError("Cox model needs at least one event")
    names = list(names) if names is not None else [f"x{j}" for j in range(p)]
    if p == 0:
        bt, bh = _breslow_baseline(np.zeros(0), X, times, events)
        ll = cox_partial_loglik(np.zeros(0), X, times, events, with_derivatives=False)
        return CoxResult(np.zeros(0), np.zeros(0), ll, np.zeros(0), 0, True, bt, bh, names)
    centered = X - X.mean(axis=0)
    if np.linalg.matrix_rank(centered) < p:
        raise CoxError("singular information matrix: design matrix is rank deficient (constant or collinear covariate)")
    scale = np.maximum(X.std(axis=0), 1e-12)
    beta = np.zeros(p)
    ll, grad, hess = cox_partial_loglik(beta, X, times, events)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(grad)) < tol:
            converged = True
            it -= 1
            break
        info = -hess
        try:
            np.linalg.cholesky(info)
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            raise CoxError("singular information matrix") from None
        t = 1.0
        while True:
            cand = beta + t * step
            ll_c, g_c, h_c = cox_partial_loglik(cand, X, times, events)
            if ll_c >= ll - 1e-12 or t < 1e-10:
                break
            t *= 0.5
        beta, ll, grad, hess = cand, ll_c, g_c, h_c
        if np.any(np.abs(beta) * scale > 20.0):
            raise CoxError(f"Cox fit diverged (monotone likelihood): coefficients {beta}")
    else:
        converged = bool(np.max(np.abs(grad)) < tol)
    # under separation the gradient vanishes while beta is still finite: a large
    # coefficient whose doubling does not lower the likelihood is not a maximum
    for j in np.flatnonzero(np.abs(beta) * scale > 10.0):
        probe = beta.copy()
        probe[j] *= 2.0
        if cox_partial_loglik(probe, X, times, events, with_derivatives=False) >= ll - 1e-9:
            raise CoxError(f"Cox fit diverged (monotone likelihood) in coefficient {names[j]}")
    try:
        cov = np.linalg.inv(-hess)
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        raise CoxError("singular information matrix at the optimum") from None
    bt, bh = _breslow_baseline(beta, X, times, events)
    return CoxResult(beta, se, ll, grad, it, converged, bt, bh, names)


def design_matrix(data: TrialDataset, columns: Sequence[str]):
    """Numeric design: continuous columns as-is, categoricals as treatment-coded dummies."""
    blocks, names = [], []
    for name in columns:
        kind = data.schema.kind_of(name)
        x = data.column(name)
        if kind.is_categorical and len(kind.levels) > 2:
            for code in range(1, len(kind.levels)):
                blocks.append((x == code).astype(float))
                names.append(f"{name}={kind.levels[code]}")
        else:
            blocks.append(x.astype(float))
            names.append(name)
    X = np.column_stack(blocks) if blocks else np.zeros((data.n, 0))
    return X, names


def cox_fit(data: TrialDataset, covariates: Sequence[str]) -> CoxResult:
    X, names = design_matrix(data, covariates)
    return cox_fit_arrays(X, data.time, data.event, names)


# -- discrimination / calibration ----------------------------------------------


def c_index(risk_scores, times, events) -> float:
    """Harrell's concordance; higher risk should mean earlier events. Score ties count 1/2."""
    risk = np.asarray(risk_scores, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=np.int64)
    if not risk.size == times.size == events.size:
        raise ValueError("risk_scores, times and events must have equal length")
    conc, tied, comparable = _kernels.concordance_counts(risk, times, events)
    if comparable == 0:
        raise ValueError("no comparable pairs")
    return (conc + 0.5 * tied) / comparable


def integrated_brier(predictions, times, events, grid, censor_times=None, censor_events=None) -> float:
    """IPCW Brier score averaged over ``grid`` (trapezoid rule, normalized by the grid span).

    ``predictions[i, k]`` is the predicted S(grid[k] | x_i). Censoring
    weights come from the reverse Kaplan-Meier of ``censor_times`` /
    ``censor_events`` (defaults to the evaluation data); event terms use
    the left limit G(t_i-).
    """
    pred = np.asarray(predictions, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=np.int64)
    grid = np.asarray(grid, dtype=float)
    if pred.shape != (times.size, grid.size):
        raise ValueError(f"predictions shape {pred.shape} != ({times.size}, {grid.size})")
    if grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be nonempty and strictly increasing")
    if grid[0] < 0 or grid[-1] > times.max():
        raise ValueError("grid must lie inside the observed follow-up")
    ct = times if censor_times is None else np.asarray(censor_times, dtype=float)
    ce = events if censor_events is None else np.asarray(censor_events, dtype=np.int64)
    g = kaplan_meier(ct, 1 - ce)
    g_event = g.left(times)
    scores = np.empty(grid.size)
    for k, t in enumerate(grid):
        died = (times <= t) & (events == 1)
        alive = times > t
        g_t = float(g(t))
        if (alive.any() and g_t <= 0) or np.any(g_event[died] <= 0):
            raise ValueError(f"censoring survival is zero at a weight time (t={t})")
        term = np.zeros(times.size)
        term[died] = pred[died, k] ** 2 / g_event[died]
        if alive.any():
            term[alive] = (1.0 - pred[alive, k]) ** 2 / g_t
        scores[k] = term.mean()
    if grid.size == 1:
        return float(scores[0])
    area = np.sum(np.diff(grid) * (scores[1:] + scores[:-1]) / 2.0)
    return float(area / (grid[-1] - grid[0]))


# -- Monte Carlo effect size -----------------------------------------------------


@dataclass(frozen=True)
class EffectSize:
    betas: tuple[float, ...]
    beta_tilde: tuple[float, ...]
    events_treated: tuple[float, ...]
    events_control: tuple[float, ...]
    n_treated: tuple[float, ...]
    n_control: tuple[float, ...]

    def to_json(self) -> dict:
        return {k: list(v) for k, v in self.__dict__.items()}


def effect_size_mc(cfg, betas: Sequence[float], reps: int = 500, seed: int = 0) -> EffectSize:
    """Average univariate Cox coefficient of treatment (and event counts per arm) per beta.

    The same replication seeds are used for every beta so the curve in beta
    is smooth.
    """
    from .seeding import child_seed
    from .simulate import simulate_trial, with_fixed_censoring

    if reps < 100:
        raise ValueError("effect_size_mc needs reps >= 100")
    cfg = with_fixed_censoring(cfg)
    out = {k: [] for k in ("bt", "et", "ec", "nt", "nc")}
    for beta in betas:
        acc = np.zeros(5)
        for r in range(reps):
            data = simulate_trial(cfg.replace(beta=float(beta), seed=child_seed(seed, "effect-size", r)))
            fit = cox_fit_arrays(data.treatment[:, None], data.time, data.event)
            treated = data.treatment == 1
            acc += (
                fit.coef[0],
                data.event[treated].sum(),
                data.event[~treated].sum(),
                treated.sum(),
                (~treated).sum(),
            )
        acc /= reps
        for key, v in zip(out, acc):
            out[key].append(float(v))
    return EffectSize(tuple(float(b) for b in betas), *(tuple(out[k]) for k in out))

"""Ground-truth trial simulator: Toeplitz-correlated covariates, Weibull event
and censoring times, Bernoulli(1/2) treatment assignment."""

from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass

import numpy as np

from .dataset import BINARY, Column, FeatureKind, Schema, TrialDataset
from .seeding import as_generator, rng_for

INDEPENDENT = "independent"
DEPENDENT = "dependent"

_REAL_BLOCK_ALPHA = (1.0, -math.exp(-1 / 10), math.exp(-2 / 10), 0.0, 0.0, 0.0)


class CalibrationError(ValueError):
    pass


def _default_mask() -> tuple[bool, ...]:
    return (False,) * 6 + (True,) * 6


def _default_alpha() -> tuple[float, ...]:
    return _REAL_BLOCK_ALPHA + (0.0,) * 6


@dataclass(frozen=True)
class SimConfig:
    n: int = 600
    d: int = 12
    rho: float = 0.5
    binary_mask: tuple[bool, ...] = dataclasses.field(default_factory=_default_mask)
    alpha: tuple[float, ...] = dataclasses.field(default_factory=_default_alpha)
    beta: float = 0.0
    kappa_t: float = 2.0
    kappa_c: float = 2.0
    lambda_c: float | None = None
    censoring_mode: str = INDEPENDENT
    target_censoring: float = 0.15
    treatment_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "binary_mask", tuple(bool(b) for b in self.binary_mask))
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be positive")
        if not -1.0 < self.rho < 1.0:
            raise ValueError(f"|rho| must be < 1 for a positive-definite Toeplitz matrix, got {self.rho}")
        if len(self.alpha) != self.d:
            raise ValueError(f"alpha has length {len(self.alpha)}, expected d={self.d}")
        if len(self.binary_mask) != self.d:
            raise ValueError(f"binary_mask has length {len(self.binary_mask)}, expected d={self.d}")
        if self.kappa_t <= 0 or self.kappa_c <= 0:
            raise ValueError("Weibull shapes must be positive")
        if self.lambda_c is not None and self.lambda_c <= 0:
            raise ValueError("censoring scale must be positive")
        if self.censoring_mode not in (INDEPENDENT, DEPENDENT):
            raise ValueError(f"unknown censoring mode {self.censoring_mode!r}")

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "SimConfig":
        obj = dict(obj)
        for key in ("binary_mask", "alpha"):
            if key in obj:
                obj[key] = tuple(obj[key])
        return cls(**obj)

    def column_names(self) -> list[str]:
        return [f"x{j + 1}" for j in range(self.d)]

    def schema(self) -> Schema:
        cols = tuple(
            Column(name, BINARY if binary else FeatureKind.real())
            for name, binary in zip(self.column_names(), self.binary_mask)
        )
        return Schema(cols, "treatment", "time", "event")


def toeplitz_covariance(d: int, rho: float) -> np.ndarray:
    idx = np.arange(d)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def sample_covariates(cfg: SimConfig, rng=None) -> np.ndarray:
    """n x d draws from N(0, Sigma), Sigma_jk = rho^|j-k|; masked columns thresholded at 0."""
    rng = as_generator(cfg.seed if rng is None else rng)
    sigma = toeplitz_covariance(cfg.d, cfg.rho)
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"Toeplitz covariance with rho={cfg.rho} is not positive definite") from exc
    x = rng.standard_normal((cfg.n, cfg.d)) @ chol.T
    mask = np.asarray(cfg.binary_mask)
    x[:, mask] = (x[:, mask] > 0).astype(np.float64)
    return x


def _open_uniform(rng: np.random.Generator, size) -> np.ndarray:
    u = rng.random(size)
    u[u == 0.0] = np.nextafter(0.0, 1.0)
    return u


def weibull_event_time(u, linear_predictor, kappa):
    """Inverse-transform draw: (-log(1-u) / exp(lp))^(1/kappa)."""
    return (-np.log1p(-np.asarray(u, dtype=float)) / np.exp(linear_predictor)) ** (1.0 / kappa)


def censoring_time(v, linear_predictor, cfg: SimConfig, lambda_c: float):
    w = -np.log1p(-np.asarray(v, dtype=float))
    if cfg.censoring_mode == DEPENDENT:
        w = w / np.exp(linear_predictor)
    return lambda_c * w ** (1.0 / cfg.kappa_c)


def linear_predictor(x: np.ndarray, e: np.ndarray, cfg: SimConfig) -> np.ndarray:
    return x @ np.asarray(cfg.alpha) + cfg.beta * np.asarray(e, dtype=float)


def sample_outcomes(x, e, cfg: SimConfig, rng=None, lambda_c: float | None = None, return_raw: bool = False):
    """Observed (t, delta) with t = min(tau, c) and delta = 1{tau <= c}.

    With ``return_raw`` the raw event and censoring draws are returned too.
    """
    x = np.asarray(x, dtype=float)
    e = np.asarray(e)
    if x.shape[0] != e.shape[0]:
        raise ValueError("covariates and treatment lengths differ")
    rng = as_generator(cfg.seed if rng is None else rng)
    lam = lambda_c if lambda_c is not None else cfg.lambda_c
    if lam is None:
        lam = calibrate_censoring(cfg)
    n = x.shape[0]
    u = _open_uniform(rng, n)
    v = _open_uniform(rng, n)
    lp = linear_predictor(x, e, cfg)
    tau = weibull_event_time(u, lp, cfg.kappa_t)
    c = censoring_time(v, lp, cfg, lam)
    t = np.minimum(tau, c)
    delta = (tau <= c).astype(np.int64)
    if return_raw:
        return t, delta, tau, c
    return t, delta


class _Pilot:
    """Fixed pilot draws so the censoring fraction is a deterministic monotone function of lambda_c."""

    def __init__(self, cfg: SimConfig, n: int, seed: int):
        rng = rng_for(seed, "censoring-pilot")
        pilot_cfg = cfg.replace(n=n)
        x = sample_covariates(pilot_cfg, rng)
        e = (rng.random(n) < cfg.treatment_prob).astype(np.int64)
        u = _open_uniform(rng, n)
        v = _open_uniform(rng, n)
        lp = linear_predictor(x, e, cfg)
        self.tau = weibull_event_time(u, lp, cfg.kappa_t)
        self.unit_c = censoring_time(v, lp, cfg, 1.0)

    def fraction(self, lambda_c: float) -> float:
        return float(np.mean(lambda_c * self.unit_c < self.tau))


def calibrate_censoring(cfg: SimConfig, pilot_n: int = 50_000, tol: float = 1e-3, seed: int = 0) -> float:
    """Censoring scale giving ``cfg.target_censoring`` on a pilot sample (bisection in log-scale).

    The pilot sample is drawn from ``seed`` and not from ``cfg.seed`` so that
    every trial of a study shares one calibrated scale.
    """
    return _calibrate_cached(cfg.replace(lambda_c=None, seed=0, n=1), pilot_n, tol, seed)


def with_fixed_censoring(cfg: SimConfig) -> SimConfig:
    """Pin ``lambda_c`` to the value calibrated under no treatment effect."""
    if cfg.lambda_c is not None:
        return cfg
    return cfg.replace(lambda_c=calibrate_censoring(cfg.replace(beta=0.0)))


@functools.lru_cache(maxsize=256)
def _calibrate_cached(cfg: SimConfig, pilot_n: int, tol: float, seed: int) -> float:
    target = cfg.target_censoring
    lo, hi = math.log(1e-6), math.log(1e6)
    if not 0.0 < target < 1.0:
        raise CalibrationError(f"target censoring {target} cannot be bracketed in [1e-6, 1e6]")
    pilot = _Pilot(cfg, pilot_n, seed)
    f_lo, f_hi = pilot.fraction(math.exp(lo)), pilot.fraction(math.exp(hi))
    if not f_hi < target < f_lo:
        raise CalibrationError(
            f"target censoring {target} outside achievable range ({f_hi:.4f}, {f_lo:.4f}) for lambda_c in [1e-6, 1e6]"
        )
    mid = 0.5 * (lo + hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f = pilot.fraction(math.exp(mid))
        if abs(f - target) <= tol or hi - lo < 1e-12:
            break
        # fraction decreases as lambda_c grows
        if f > target:
            lo = mid
        else:
            hi = mid
    return math.exp(mid)


def simulate_trial(cfg: SimConfig, debug: bool = False):
    """One simulated trial. ``debug=True`` also returns the raw (tau, c) draws."""
    rng = as_generator(cfg.seed)
    x = sample_covariates(cfg, rng)
    e = (rng.random(cfg.n) < cfg.treatment_prob).astype(np.int64)
    lam = cfg.lambda_c if cfg.lambda_c is not None else calibrate_censoring(cfg)
    t, delta, tau, c = sample_outcomes(x, e, cfg, rng, lambda_c=lam, return_raw=True)
    names = cfg.column_names()
    cov = {}
    for j, name in enumerate(names):
        cov[name] = x[:, j].astype(np.int64) if cfg.binary_mask[j] else x[:, j]
    data = TrialDataset(cfg.schema(), cov, e, t, delta)
    if debug:
        return data, {"tau": tau, "c": c, "lambda_c": lam}
    return data

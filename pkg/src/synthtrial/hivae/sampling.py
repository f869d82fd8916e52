from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..dataset import TrialDataset
from ..seeding import rng_for
from .model import HiVaeModel

POSTERIOR = "posterior"
PRIOR = "prior"

# decoder(model, z, s, source_rows, rng) -> TrialDataset
Decoder = Callable[[HiVaeModel, np.ndarray, np.ndarray, "TrialDataset | None", np.random.Generator], TrialDataset]


@dataclass(frozen=True)
class GeneratedArm:
    data: TrialDataset
    mode: str
    seed: int
    source: str

    def provenance(self) -> dict:
        return {"mode": self.mode, "seed": self.seed, "source": self.source, "n": self.data.n}


def source_schedule(n_source: int, n_out: int, rng: np.random.Generator) -> np.ndarray:
    """Row indices covering the source in shuffled passes until ``n_out`` rows are reached."""
    passes = -(-n_out // n_source)
    return np.concatenate([rng.permutation(n_source) for _ in range(passes)])[:n_out]


def model_decoder(model: HiVaeModel, z, s, source_rows, rng) -> TrialDataset:
    values = model.sample_rows(z, s, rng)
    covariates = {c.name: values[c.name] for c in model.schema.columns}
    n = z.shape[0]
    # generated arms are control arms whatever the training arms were
    return TrialDataset(model.schema, covariates, np.zeros(n, np.int64), values["__time__"], values["__event__"])


def identity_decoder(model, z, s, source_rows, rng) -> TrialDataset:
    """Test double: returns the scheduled source rows untouched."""
    return source_rows


def _check_n(n_out: int):
    if n_out < 1:
        raise ValueError(f"n_out must be >= 1, got {n_out}")


def sample_posterior(model: HiVaeModel, source: TrialDataset, n_out: int, seed: int, decoder: Decoder | None = None) -> GeneratedArm:
    """Encode scheduled source rows, draw hard s ~ q(s), z ~ q(z | s), decode and sample."""
    _check_n(n_out)
    if source.n < 1:
        raise ValueError("source dataset is empty")
    rng = rng_for(seed, "posterior")
    idx = source_schedule(source.n, n_out, rng)
    rows = source.take(idx)
    pi, mu, var = model.posterior(rows)
    L = model.config.s_dim
    comp = np.array([rng.choice(L, p=p / p.sum()) for p in pi])
    s = np.eye(L)[comp]
    pick = np.arange(n_out)
    z = mu[pick, comp] + np.sqrt(var[pick, comp]) * rng.standard_normal(mu.shape[::2])
    out = (decoder or model_decoder)(model, z, s, rows, rng)
    return GeneratedArm(out, POSTERIOR, int(seed), model.digest())


def sample_prior(model: HiVaeModel, n_out: int, seed: int, decoder: Decoder | None = None) -> GeneratedArm:
    """s ~ uniform Cat(L), z ~ N(mu_p(s), I), then decode and sample."""
    _check_n(n_out)
    rng = rng_for(seed, "prior")
    L, K = model.config.s_dim, model.config.z_dim
    comp = rng.integers(0, L, size=n_out)
    s = np.eye(L)[comp]
    z = model.store["prior.mu"][comp] + rng.standard_normal((n_out, K))
    out = (decoder or model_decoder)(model, z, s, None, rng)
    return GeneratedArm(out, PRIOR, int(seed), model.digest())


def generate(model: HiVaeModel, n_out: int, seed: int, mode: str = POSTERIOR, source: TrialDataset | None = None) -> GeneratedArm:
    if mode == POSTERIOR:
        if source is None:
            raise ValueError("posterior sampling needs the training data as source")
        return sample_posterior(model, source, n_out, seed)
    if mode == PRIOR:
        return sample_prior(model, n_out, seed)
    raise ValueError(f"unknown sampling mode {mode!r}")


__all__ = [
    "POSTERIOR",
    "PRIOR",
    "GeneratedArm",
    "generate",
    "identity_decoder",
    "model_decoder",
    "sample_posterior",
    "sample_prior",
    "source_schedule",
]

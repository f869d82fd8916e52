from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import nncore as nn
from ..dataset import TrialDataset
from ..seeding import rng_for
from .config import HiVaeConfig
from .model import HiVaeModel, ModelError

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    """The ELBO became non-finite. ``model`` holds the last good checkpoint."""

    def __init__(self, message: str, model: HiVaeModel, epoch: int):
        super().__init__(message)
        self.model = model
        self.epoch = epoch


@dataclass
class TrainResult:
    model: HiVaeModel
    trace: list[float] = field(default_factory=list)
    best_epoch: int = 0
    epochs_run: int = 0
    stop_reason: str = ""

    @property
    def best_elbo(self) -> float:
        return self.trace[self.best_epoch]


def temperature_at(cfg: HiVaeConfig, epoch: int) -> float:
    if cfg.anneal_to is None or cfg.max_epochs <= 1:
        return cfg.temperature
    frac = min(epoch / (cfg.max_epochs - 1), 1.0)
    return cfg.temperature + frac * (cfg.anneal_to - cfg.temperature)


def train(data: TrialDataset, config: HiVaeConfig, seed: int = 0, model: HiVaeModel | None = None) -> TrainResult:
    """Minibatch Adam ascent on the ELBO with early stopping on the full-data ELBO.

    ``trace[0]`` is the ELBO before any update; ``trace[e]`` the value after
    epoch ``e``. The full-data ELBO always uses the same noise draw so the
    trace is comparable across epochs. The returned model is the best
    checkpoint seen.
    """
    if data.n == 0:
        raise ModelError("cannot train on an empty dataset")
    model = model or HiVaeModel.build(data, config, seed=rng_for(seed, "init"))
    cfg = model.config
    batch_all = model.prepare(data)
    n = batch_all.n
    bs = n if cfg.batch_size <= 0 else min(cfg.batch_size, n)
    rng = rng_for(seed, "train")
    eval_noise = model.draw_noise(rng_for(seed, "eval-noise"), n)

    def full_elbo(tau):
        return model.elbo(model.store.constants(), batch_all, *eval_noise, temperature=tau).value / n

    current = full_elbo(cfg.temperature)
    if not np.isfinite(current):
        raise TrainingDivergence("initial ELBO is not finite", model, 0)
    trace = [current]
    best, best_epoch, best_params = current, 0, model.store.snapshot()
    stale = 0
    reason = "max_epochs"
    for epoch in range(1, cfg.max_epochs + 1):
        tau = temperature_at(cfg, epoch - 1)
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            if idx.size == 0:
                continue
            batch = batch_all.take(idx)
            g, e = model.draw_noise(rng, idx.size)
            leaves = model.store.leaves()
            terms = model.elbo(leaves, batch, g, e, tau)
            if not np.isfinite(terms.value):
                model.store.assign(best_params)
                raise TrainingDivergence(f"non-finite minibatch ELBO at epoch {epoch}", model, epoch)
            loss = terms.total * (-1.0 / idx.size)
            loss.backward()
            grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.value)) for k, t in leaves.items()}
            try:
                nn.adam_step(model.store, grads, cfg.learning_rate)
            except nn.NonFiniteError as exc:
                model.store.assign(best_params)
                raise TrainingDivergence(f"epoch {epoch}: {exc}", model, epoch) from exc
        current = full_elbo(cfg.temperature)
        if not np.isfinite(current):
            model.store.assign(best_params)
            raise TrainingDivergence(f"non-finite ELBO after epoch {epoch}", model, epoch)
        trace.append(current)
        if current > best + cfg.min_rel_improvement * abs(best):
            best, best_epoch, best_params = current, epoch, model.store.snapshot()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                reason = "early_stop"
                break
    model.store.assign(best_params)
    log.debug("trained %d epochs, best ELBO %.4f at epoch %d (%s)", len(trace) - 1, best, best_epoch, reason)
    return TrainResult(model, trace, best_epoch, len(trace) - 1, reason)

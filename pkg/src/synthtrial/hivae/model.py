"""HI-VAE with censored survival heads.

Generative side: s ~ Cat(1/L), z | s ~ N(M s, I), y = g(z), and every
feature (plus the event/censoring pair) is drawn from a head fed with
[y, s]. Recognition side: q(s | row) = Cat(pi(row)) and
q(z | row, s) = N(mu_q(row, s), diag exp(logvar_q(row, s))), where mu_q
and logvar_q are affine in s.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import nncore as nn
from ..dataset import CATEGORICAL, COUNT, POSITIVE, REAL, Schema, TrialDataset
from ..seeding import as_generator
from . import heads
from .config import PIECEWISE, WEIBULL, HiVaeConfig

MODEL_FORMAT = "synthtrial-hivae"
MODEL_VERSION = 1
TREATMENT_FEATURE = "__treatment__"
HEAD_INIT_SCALE = 0.1


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str
    n_levels: int
    stats: dict

    @property
    def width(self) -> int:
        return heads.head_width(self.kind, self.n_levels)

    def to_json(self) -> dict:
        return {"name": self.name, "kind": self.kind, "n_levels": self.n_levels, "stats": self.stats}


def _standardize_stats(x: np.ndarray) -> dict:
    mean = float(np.mean(x))
    scale = float(np.std(x))
    return {"mean": mean, "scale": scale if scale > 1e-8 else 1.0}


def _feature_from_column(name: str, kind, values: np.ndarray) -> Feature:
    if kind.kind == REAL:
        return Feature(name, REAL, 0, _standardize_stats(values))
    if kind.kind == POSITIVE:
        return Feature(name, POSITIVE, 0, _standardize_stats(np.log(values)))
    if kind.kind == COUNT:
        return Feature(name, COUNT, 0, _standardize_stats(np.log1p(values)))
    return Feature(name, CATEGORICAL, len(kind.levels), {})


@dataclass
class Batch:
    """Encoder inputs plus the raw targets for every head."""

    x_enc: np.ndarray
    targets: list
    time: np.ndarray
    event: np.ndarray

    @property
    def n(self) -> int:
        return self.time.size

    def take(self, idx) -> "Batch":
        return Batch(self.x_enc[idx], [t[idx] for t in self.targets], self.time[idx], self.event[idx])


@dataclass
class ElboTerms:
    total: nn.Tensor
    reconstruction: np.ndarray
    kl_z: np.ndarray
    kl_s: np.ndarray

    @property
    def value(self) -> float:
        return float(self.total.value)


class HiVaeModel:
    def __init__(self, schema: Schema, config: HiVaeConfig, features: list[Feature], time_stats: dict, edges: np.ndarray | None, store: nn.ParamStore):
        self.schema = schema
        self.config = config
        self.features = features
        self.time_stats = time_stats
        self.edges = None if edges is None else np.asarray(edges, dtype=float)
        self.store = store
        self.layers = {d.name: d for d in self._layers()}

    # -- construction ---------------------------------------------------------------

    @classmethod
    def build(cls, data: TrialDataset, config: HiVaeConfig, seed=0) -> "HiVaeModel":
        """Fresh model with normalization statistics taken from ``data``."""
        if data.n < 2:
            raise ModelError("need at least two training rows")
        features = [_feature_from_column(c.name, c.kind, data.covariates[c.name]) for c in data.schema.columns]
        if config.include_treatment:
            features.append(Feature(TREATMENT_FEATURE, CATEGORICAL, 2, {}))
        logt = np.log(data.time)
        time_stats = _standardize_stats(logt)
        time_stats["time_scale"] = float(np.exp(np.mean(logt)))
        edges = heads.interval_edges(data.time, config.n_intervals) if config.survival_head == PIECEWISE else None
        model = cls(data.schema, config, features, time_stats, edges, nn.ParamStore())
        model._init_params(as_generator(seed))
        return model

    @property
    def input_dim(self) -> int:
        return sum(f.n_levels if f.kind == CATEGORICAL else 1 for f in self.features) + 2

    @property
    def survival_width(self) -> int:
        return 2 if self.config.survival_head == WEIBULL else self.edges.size - 1

    def _layers(self):
        c = self.config
        L, K, H = c.s_dim, c.z_dim, c.y_dim
        trunk = c.encoder_hidden or self.input_dim
        out = []
        if c.encoder_hidden:
            out.append(nn.Dense("enc.trunk", self.input_dim, c.encoder_hidden, "tanh"))
        out += [
            nn.Dense("enc.pi", trunk, L),
            nn.Dense("enc.mu", trunk + L, K),
            nn.Dense("enc.logvar", trunk + L, K),
            nn.Dense("dec.g", K, H),
        ]
        out += [nn.Dense(f"head.{j}", H + L, f.width) for j, f in enumerate(self.features)]
        for which in ("T", "C"):
            if c.survival_layers == 2:
                out += [nn.Dense(f"surv.{which}.0", H + L, H, "tanh"), nn.Dense(f"surv.{which}.1", H, self.survival_width)]
            else:
                out.append(nn.Dense(f"surv.{which}.0", H + L, self.survival_width))
        return out

    def _output_layers(self) -> set[str]:
        last = "1" if self.config.survival_layers == 2 else "0"
        return {f"head.{j}" for j in range(len(self.features))} | {f"surv.T.{last}", f"surv.C.{last}"}

    def _init_params(self, rng: np.random.Generator):
        outputs = self._output_layers()
        for layer in self.layers.values():
            layer.init(self.store, rng)
            if layer.name in outputs:
                # heads start close to one shared distribution; full Glorot weights put
                # some rows at extreme Weibull shapes and stall the censoring head
                self.store.params[f"{layer.name}.W"] *= HEAD_INIT_SCALE
        self.store.add("prior.mu", nn.glorot_uniform(rng, self.config.s_dim, self.config.z_dim))

    # -- data transforms ---------------------------------------------------------------

    def prepare(self, data: TrialDataset) -> Batch:
        if data.schema.digest() != self.schema.digest():
            raise ModelError("dataset schema does not match the model schema")
        cols, targets = [], []
        for f in self.features:
            x = data.treatment if f.name == TREATMENT_FEATURE else data.covariates[f.name]
            targets.append(np.asarray(x))
            if f.kind == CATEGORICAL:
                cols.append(np.eye(f.n_levels)[x])
                continue
            if f.kind == REAL:
                u = x
            elif f.kind == POSITIVE:
                u = np.log(x)
            else:
                u = np.log1p(x)
            cols.append(((u - f.stats["mean"]) / f.stats["scale"])[:, None])
        ts = self.time_stats
        cols.append(((np.log(data.time) - ts["mean"]) / ts["scale"])[:, None])
        cols.append(data.event[:, None].astype(float))
        return Batch(np.hstack(cols).astype(float), targets, np.asarray(data.time, float), np.asarray(data.event))

    # -- networks ----------------------------------------------------------------------

    def encode(self, params, x_enc):
        """Returns ``(log_pi, parts)``.

        ``parts["mu"]`` and ``parts["logvar"]`` are ``(base, W_s)`` pairs: the
        q(z) parameters for a (possibly relaxed) s are ``base + s @ W_s``.
        """
        L = self.config.s_dim
        h = nn.as_tensor(x_enc)
        if self.config.encoder_hidden:
            h = self.layers["enc.trunk"](params, h)
        log_pi = nn.log_softmax(self.layers["enc.pi"](params, h), axis=1)
        trunk = h.shape[1]
        parts = {}
        for key in ("mu", "logvar"):
            W, b = params[f"enc.{key}.W"], params[f"enc.{key}.b"]
            base = h @ W[:trunk] + b
            w_s = W[trunk : trunk + L]
            parts[key] = (base, w_s)
        return log_pi, parts

    @staticmethod
    def _all_components(part):
        base, w_s = part
        n, k = base.shape
        return nn.reshape(base, (n, 1, k)) + nn.reshape(w_s, (1,) + w_s.shape)

    @staticmethod
    def _at(part, s):
        base, w_s = part
        return base + nn.as_tensor(s) @ w_s

    def posterior(self, data_or_batch):
        """Numeric (pi, mu_q, var_q) with mu_q/var_q of shape (n, L, K)."""
        batch = data_or_batch if isinstance(data_or_batch, Batch) else self.prepare(data_or_batch)
        params = self.store.constants()
        log_pi, parts = self.encode(params, batch.x_enc)
        mu = self._all_components(parts["mu"]).value
        logvar = self._all_components(parts["logvar"]).value
        pi = np.exp(log_pi.value)
        if not (np.all(np.isfinite(pi)) and np.all(np.isfinite(mu)) and np.all(np.isfinite(logvar))):
            raise ModelError("non-finite encoder output")
        return pi, mu, np.exp(logvar)

    def _survival_out(self, params, ys, which):
        out = self.layers[f"surv.{which}.0"](params, ys)
        if self.config.survival_layers == 2:
            out = self.layers[f"surv.{which}.1"](params, out)
        return out

    def decode(self, params, z, s):
        """Head outputs for latent draws: (feature outputs, survival T output, survival C output)."""
        y = self.layers["dec.g"](params, z)
        ys = nn.concat([y, nn.as_tensor(s)], axis=1)
        feats = [self.layers[f"head.{j}"](params, ys) for j in range(len(self.features))]
        return feats, self._survival_out(params, ys, "T"), self._survival_out(params, ys, "C")

    def survival_log_terms(self, out, t):
        """(log f(t), log S(t)) for one survival head output."""
        if self.config.survival_head == WEIBULL:
            scale, shape = heads.weibull_params(out)
            tn = np.asarray(t, float) / self.time_stats["time_scale"]
            shift = math.log(self.time_stats["time_scale"])
            return heads.weibull_log_density(tn, scale, shape) - shift, heads.weibull_log_survival(tn, scale, shape)
        return heads.piecewise_log_terms(out, t, self.edges)

    def reconstruction(self, params, batch: Batch, z, s) -> nn.Tensor:
        """Per-row log p(x, t, delta | z, s)."""
        feats, out_t, out_c = self.decode(params, z, s)
        total = None
        for f, out, x in zip(self.features, feats, batch.targets):
            ll = heads.feature_loglik(f.kind, out, x, f.stats)
            total = ll if total is None else total + ll
        lf_t, ls_t = self.survival_log_terms(out_t, batch.time)
        lf_c, ls_c = self.survival_log_terms(out_c, batch.time)
        surv = heads.censored_loglik(lf_t, ls_t, lf_c, ls_c, batch.event)
        return surv if total is None else total + surv

    def elbo(self, params, batch: Batch, gumbel_noise, eps, temperature: float = 1.0, check: bool = True) -> ElboTerms:
        """Single-sample ELBO summed over rows.

        The Gaussian KL is averaged over q(s) exactly rather than sampled.
        ``gumbel_noise`` has shape (n, L) and ``eps`` shape (n, K).
        """
        L = self.config.s_dim
        log_pi, parts = self.encode(params, batch.x_enc)
        pi = nn.exp(log_pi)
        s_soft = nn.gumbel_softmax(log_pi, temperature, gumbel_noise)
        z = nn.gaussian_reparameterize(self._at(parts["mu"], s_soft), self._at(parts["logvar"], s_soft), eps)
        rec = self.reconstruction(params, batch, z, s_soft)
        mu_all = self._all_components(parts["mu"])
        lv_all = self._all_components(parts["logvar"])
        prior = params["prior.mu"]
        diff = mu_all - nn.reshape(prior, (1,) + prior.shape)
        kl_comp = 0.5 * (nn.exp(lv_all) + nn.square(diff) - 1.0 - lv_all).sum(axis=2)
        kl_z = (pi * kl_comp).sum(axis=1)
        kl_s = (pi * (log_pi + math.log(L))).sum(axis=1)
        if check:
            if np.any(kl_z.value < -1e-9) or np.any(kl_s.value < -1e-9):
                raise ModelError(f"negative KL term (min kl_z={kl_z.value.min():.3g}, min kl_s={kl_s.value.min():.3g})")
        total = (rec - kl_z - kl_s).sum()
        return ElboTerms(total, rec.value.copy(), kl_z.value.copy(), kl_s.value.copy())

    def draw_noise(self, rng: np.random.Generator, n: int):
        return nn.sample_gumbel(rng, (n, self.config.s_dim)), rng.standard_normal((n, self.config.z_dim))

    def evaluate_elbo(self, data_or_batch, seed=0, temperature: float | None = None) -> float:
        batch = data_or_batch if isinstance(data_or_batch, Batch) else self.prepare(data_or_batch)
        g, e = self.draw_noise(np.random.default_rng(seed), batch.n)
        tau = self.config.temperature if temperature is None else temperature
        return self.elbo(self.store.constants(), batch, g, e, tau).value

    # -- sampling helpers ------------------------------------------------------------

    def sample_rows(self, z: np.ndarray, s: np.ndarray, rng: np.random.Generator) -> dict:
        """Decode latent draws and sample every feature plus (t, delta)."""
        params = self.store.constants()
        feats, out_t, out_c = self.decode(params, nn.Tensor(z), nn.Tensor(s))
        values = {}
        for f, out in zip(self.features, feats):
            values[f.name] = heads.sample_feature(f.kind, out.value, f.stats, rng)
        if self.config.survival_head == WEIBULL:
            scale = self.time_stats["time_scale"]
            tau = heads.sample_weibull(out_t.value, rng) * scale
            cens = heads.sample_weibull(out_c.value, rng) * scale
        else:
            tau = heads.sample_piecewise(out_t.value, self.edges, rng)
            cens = heads.sample_piecewise(out_c.value, self.edges, rng)
        values["__time__"] = np.maximum(np.minimum(tau, cens), 1e-9)
        values["__event__"] = (tau <= cens).astype(np.int64)
        return values

    # -- persistence -------------------------------------------------------------------

    def digest(self) -> str:
        blob = json.dumps(nn.params_to_json(self.store), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def sidecar(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "schema": self.schema.to_manifest(),
            "schema_digest": self.schema.digest(),
            "config": self.config.to_json(),
            "features": [f.to_json() for f in self.features],
            "time_stats": self.time_stats,
            "edges": None if self.edges is None else self.edges.tolist(),
            "param_digest": self.digest(),
        }

    def save(self, path) -> Path:
        """Writes the JSON sidecar to ``path`` and the parameters next to it (``*.params.json``)."""
        path = Path(path)
        params_path = path.with_name(path.stem + ".params.json")
        side = self.sidecar()
        side["params_file"] = params_path.name
        nn.save_checkpoint(params_path, self.store)
        path.write_text(json.dumps(side, sort_keys=True, indent=1) + "\n")
        return params_path

    @classmethod
    def load(cls, path) -> "HiVaeModel":
        path = Path(path)
        side = json.loads(path.read_text())
        if side.get("format") != MODEL_FORMAT or side.get("version") != MODEL_VERSION:
            raise ModelError(f"{path} is not a version-{MODEL_VERSION} HI-VAE sidecar")
        schema = Schema.from_manifest(side["schema"])
        if schema.digest() != side["schema_digest"]:
            raise ModelError("schema digest mismatch in model sidecar")
        store, _ = nn.load_checkpoint(path.with_name(side["params_file"]))
        features = [Feature(f["name"], f["kind"], f["n_levels"], f["stats"]) for f in side["features"]]
        edges = None if side["edges"] is None else np.array(side["edges"])
        model = cls(schema, HiVaeConfig.from_json(side["config"]), features, side["time_stats"], edges, store)
        expected = {k: v for d in model.layers.values() for k, v in ((f"{d.name}.W", (d.in_dim, d.out_dim)), (f"{d.name}.b", (d.out_dim,)))}
        for k, shape in expected.items():
            if k not in store or store[k].shape != shape:
                raise ModelError(f"checkpoint parameter {k} missing or misshapen")
        if model.digest() != side["param_digest"]:
            raise ModelError("parameter digest mismatch; checkpoint and sidecar disagree")
        return model

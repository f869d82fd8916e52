import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import logsumexp

from conftest import mixed_dataset
from synthtrial import nncore as nn
from synthtrial.dataset import COUNT, POSITIVE, REAL, Column, FeatureKind, Schema, TrialDataset, split_arms
from synthtrial.hivae import (
    PIECEWISE,
    WEIBULL,
    HiVaeConfig,
    HiVaeModel,
    ModelError,
    TrainingDivergence,
    identity_decoder,
    sample_posterior,
    sample_prior,
    train,
)
from synthtrial.hivae import heads
from synthtrial.hivae.sampling import source_schedule
from synthtrial.metrics import js_distance

SMALL = HiVaeConfig(s_dim=3, z_dim=2, y_dim=3, n_intervals=4, max_epochs=5, batch_size=0)


def _perturb(model, seed, scale=0.3):
    rng = np.random.default_rng(seed)
    model.store.assign({k: v + scale * rng.normal(size=v.shape) for k, v in model.store.params.items()})
    return model


# -- heads -------------------------------------------------------------------------


def _head_check(fn, width, n=6, seed=0):
    rng = np.random.default_rng(seed)
    return nn.grad_check(lambda p: nn.tsum(fn(p["out"])), {"out": rng.normal(size=(n, width))})


def test_feature_head_gradients():
    rng = np.random.default_rng(1)
    x_real = rng.normal(2.0, 3.0, 6)
    x_pos = rng.lognormal(0.0, 1.0, 6)
    x_cnt = rng.poisson(4.0, 6)
    x_cat = rng.integers(0, 4, 6)
    assert _head_check(lambda o: heads.normal_loglik(o, x_real, 2.0, 3.0), 2).max_rel_error < 1e-4
    assert _head_check(lambda o: heads.lognormal_loglik(o, x_pos, 0.1, 0.9), 2).max_rel_error < 1e-4
    assert _head_check(lambda o: heads.poisson_loglik(o, x_cnt), 1).max_rel_error < 1e-4
    assert _head_check(lambda o: heads.categorical_loglik(o, x_cat), 4).max_rel_error < 1e-4


def test_survival_head_gradients():
    rng = np.random.default_rng(2)
    t = rng.exponential(1.0, 6) + 0.05
    d = rng.integers(0, 2, 6)
    edges = heads.interval_edges(t, 4)

    def weib(o):
        a, b = o[:, :2], o[:, 2:]
        ft, st_ = heads.weibull_log_density(t, *heads.weibull_params(a)), heads.weibull_log_survival(t, *heads.weibull_params(a))
        fc, sc = heads.weibull_log_density(t, *heads.weibull_params(b)), heads.weibull_log_survival(t, *heads.weibull_params(b))
        return heads.censored_loglik(ft, st_, fc, sc, d)

    def piece(o):
        k = edges.size - 1
        ft, st_ = heads.piecewise_log_terms(o[:, :k], t, edges)
        fc, sc = heads.piecewise_log_terms(o[:, k:], t, edges)
        return heads.censored_loglik(ft, st_, fc, sc, d)

    assert _head_check(weib, 4).max_rel_error < 1e-4
    assert _head_check(piece, 2 * (edges.size - 1)).max_rel_error < 1e-4


def test_head_ranges_and_modes():
    out = nn.Tensor(np.array([[0.3, -40.0], [-50.0, 2.0]]))
    assert np.all(heads.poisson_rate(out).value > 0)
    p = nn.softmax(nn.Tensor(np.random.default_rng(0).normal(size=(3, 5))), axis=1).value
    assert p.shape == (3, 5)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-15)
    mu, var = heads.gaussian_params(out)
    ll = heads.gaussian_loglik(out, mu.value)
    np.testing.assert_allclose(ll.value, -0.5 * np.log(2 * np.pi * var.value), atol=1e-14)
    with pytest.raises(ValueError):
        heads.head_width("ordinal")


def test_weibull_survival_at_scale():
    out = nn.Tensor(np.array([[1.2, 0.7]]))
    scale, shape = heads.weibull_params(out)
    assert math.exp(heads.weibull_log_survival(np.array([1e-12]), scale, shape).value[0]) == pytest.approx(1.0, abs=1e-6)
    assert math.exp(heads.weibull_log_survival(scale.value, scale, shape).value[0]) == pytest.approx(math.exp(-1), abs=1e-14)


def test_piecewise_uniform_interval():
    edges = np.array([0.0, 1.0])
    log_f, log_s = heads.piecewise_log_terms(nn.Tensor(np.zeros((1, 1))), np.array([0.25]), edges)
    assert math.exp(log_f.value[0]) == pytest.approx(1.0)
    assert math.exp(log_s.value[0]) == pytest.approx(0.75)
    log_f, log_s = heads.piecewise_log_terms(nn.Tensor(np.zeros((1, 1))), np.array([2.0]), edges)
    assert log_f.value[0] == pytest.approx(math.log(1e-12)) and log_s.value[0] == pytest.approx(math.log(1e-12))


@given(st.floats(-3, 3), st.floats(-2, 2))
def test_weibull_density_integrates_to_one(a, b):
    scale, shape = (v.value[0] for v in heads.weibull_params(nn.Tensor(np.array([[a, b]]))))
    dens = lambda t: math.exp(heads.weibull_log_density(np.array([t]), nn.Tensor(scale), nn.Tensor(shape)).value[0])  # noqa: E731
    # split at the scale so quad resolves both the spike near 0 and the tail
    total = integrate.quad(dens, 0, scale, limit=200, epsabs=1e-12)[0] + integrate.quad(dens, scale, np.inf, limit=200, epsabs=1e-12)[0]
    assert total == pytest.approx(1.0, abs=1e-6)


@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_piecewise_density_integrates_to_one(seed, k):
    rng = np.random.default_rng(seed)
    edges = heads.interval_edges(rng.exponential(1.0, 50) + 1e-3, k)
    out = rng.normal(size=(1, edges.size - 1))
    dens = lambda t: math.exp(heads.piecewise_log_terms(nn.Tensor(out), np.array([t]), edges)[0].value[0])  # noqa: E731
    total = sum(integrate.quad(dens, lo, hi)[0] for lo, hi in zip(edges[:-1], edges[1:]))
    assert total == pytest.approx(1.0, abs=1e-6)
    grid = np.linspace(0, edges[-1], 400)
    probs = np.exp(out - logsumexp(out))
    s = heads.piecewise_survival(np.repeat(probs, grid.size, 0), grid, edges)
    assert s[0] == pytest.approx(1.0) and s[-1] == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.diff(s) <= 1e-15)
    mids = 0.5 * (grid[1:] + grid[:-1])
    # continuity: no jumps larger than the steepest density times the step
    assert np.max(np.abs(np.diff(s))) <= np.max(probs / np.diff(edges)) * (grid[1] - grid[0]) + 1e-12
    assert mids.size == grid.size - 1


def test_interval_edges_quantiles():
    t = np.arange(1.0, 11.0)
    edges = heads.interval_edges(t, 5)
    np.testing.assert_allclose(edges, [0.0, 2.8, 4.6, 6.4, 8.2, 10.5])


# -- model --------------------------------------------------------------------------


def test_encoder_outputs_valid(mixed):
    model = _perturb(HiVaeModel.build(mixed, SMALL, seed=0), 1)
    pi, mu, var = model.posterior(mixed)
    np.testing.assert_allclose(pi.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(var > 0)
    assert mu.shape == (mixed.n, 3, 2)
    twins = mixed.take([4, 4])
    p2, m2, v2 = model.posterior(twins)
    np.testing.assert_array_equal(p2[0], p2[1])
    np.testing.assert_array_equal(m2[0], m2[1])


def test_schema_mismatch_rejected(mixed, sim_default):
    model = HiVaeModel.build(mixed, SMALL)
    with pytest.raises(ModelError, match="schema"):
        model.prepare(sim_default)


def test_kl_terms_vanish_at_prior(mixed):
    model = HiVaeModel.build(mixed, SMALL, seed=0)
    batch = model.prepare(mixed)
    params = model.store.constants()
    # uniform q(s): zero the s-logit layer
    params["enc.pi.W"] = nn.Tensor(np.zeros_like(model.store["enc.pi.W"]))
    params["enc.pi.b"] = nn.Tensor(np.zeros_like(model.store["enc.pi.b"]))
    g, e = model.draw_noise(np.random.default_rng(0), batch.n)
    terms = model.elbo(params, batch, g, e)
    np.testing.assert_allclose(terms.kl_s, 0.0, atol=1e-12)
    # q(z | s) = N(mu_p(s), I): encoder ignores the input, W_s rows carry the prior means
    trunk = model.input_dim
    for key in ("mu", "logvar"):
        W = np.zeros_like(model.store[f"enc.{key}.W"])
        if key == "mu":
            W[trunk:] = model.store["prior.mu"]
        params[f"enc.{key}.W"] = nn.Tensor(W)
        params[f"enc.{key}.b"] = nn.Tensor(np.zeros_like(model.store[f"enc.{key}.b"]))
    terms = model.elbo(params, batch, g, e)
    np.testing.assert_allclose(terms.kl_z, 0.0, atol=1e-12)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")  # unit-scale perturbations can overflow the survival heads; only KL is checked
@given(st.integers(0, 2**32 - 1))
def test_kl_terms_nonnegative(seed):
    data = mixed_dataset(12, seed % 1000)
    model = _perturb(HiVaeModel.build(data, SMALL, seed=seed), seed, 1.0)
    g, e = model.draw_noise(np.random.default_rng(seed), data.n)
    terms = model.elbo(model.store.constants(), model.prepare(data), g, e)
    assert np.all(terms.kl_z >= 0) and np.all(terms.kl_s >= -1e-12)


@pytest.mark.parametrize("head", [WEIBULL, PIECEWISE])
@pytest.mark.parametrize("layers", [1, 2])
def test_elbo_gradient_on_mixed_batch(head, layers):
    data = mixed_dataset(10, 3)
    cfg = SMALL.replace(survival_head=head, survival_layers=layers, include_treatment=True, encoder_hidden=3)
    model = _perturb(HiVaeModel.build(data, cfg, seed=0), 2)
    batch = model.prepare(data)
    g, e = model.draw_noise(np.random.default_rng(5), batch.n)
    rep = nn.grad_check(lambda p: model.elbo(p, batch, g, e, temperature=0.8, check=False).total, model.store.snapshot())
    assert rep.max_rel_error < 1e-4, (rep.worst, rep.max_rel_error)


def test_elbo_below_quadrature_log_likelihood():
    rng = np.random.default_rng(0)
    schema = Schema((Column("x", FeatureKind.real()),))
    data = TrialDataset(schema, {"x": rng.normal(size=8)}, np.zeros(8), rng.exponential(1.0, 8) + 0.01, rng.integers(0, 2, 8))
    cfg = HiVaeConfig(s_dim=1, z_dim=2, y_dim=2)
    model = _perturb(HiVaeModel.build(data, cfg, seed=1), 3, 0.5)
    nodes, weights = np.polynomial.hermite_e.hermegauss(60)
    zz = np.stack(np.meshgrid(nodes, nodes, indexing="ij"), -1).reshape(-1, 2)
    log_w = np.log(np.outer(weights, weights).reshape(-1)) - math.log(2 * math.pi)
    params = model.store.constants()
    draws = 4000
    for i in range(3):
        row = model.prepare(data.take([i]))
        many = row.take(np.zeros(zz.shape[0], int))
        rec = model.reconstruction(params, many, nn.Tensor(zz + model.store["prior.mu"][0]), nn.Tensor(np.ones((zz.shape[0], 1)))).value
        log_px = logsumexp(rec + log_w)
        rep = row.take(np.zeros(draws, int))
        g, e = model.draw_noise(np.random.default_rng(i), draws)
        per_draw = model.elbo(params, rep, g, e).total.value / draws
        rec_draws = model.elbo(params, rep, g, e)
        vals = rec_draws.reconstruction - rec_draws.kl_z - rec_draws.kl_s
        assert per_draw == pytest.approx(vals.mean())
        assert vals.mean() <= log_px + 3 * vals.std() / math.sqrt(draws)


# -- training ------------------------------------------------------------------------


def test_training_trace_and_determinism(mixed):
    cfg = SMALL.replace(max_epochs=15, learning_rate=1e-2, batch_size=16)
    a = train(mixed, cfg, seed=4)
    b = train(mixed, cfg, seed=4)
    assert a.best_elbo >= a.trace[0]
    assert a.trace == b.trace
    for k in a.model.store:
        np.testing.assert_array_equal(a.model.store[k], b.model.store[k])
    assert a.model.digest() == b.model.digest()
    assert a.model.evaluate_elbo(mixed) == pytest.approx(b.model.evaluate_elbo(mixed))


def test_early_stopping_restores_best(mixed):
    res = train(mixed, SMALL.replace(max_epochs=200, patience=3, learning_rate=0.3), seed=1)
    assert res.stop_reason in ("early_stop", "max_epochs")
    assert res.best_elbo == max(res.trace)
    if res.stop_reason == "early_stop":
        assert res.epochs_run == res.best_epoch + 3


def test_toy_reconstruction_improves():
    rng = np.random.default_rng(0)
    n = 200
    z = rng.normal(size=n)
    schema = Schema((Column("a", FeatureKind.real()), Column("b", FeatureKind.real())))
    data = TrialDataset(schema, {"a": z + 0.1 * rng.normal(size=n), "b": -z + 0.1 * rng.normal(size=n)}, np.zeros(n), rng.exponential(1.0, n) + 0.01, np.ones(n))
    cfg = HiVaeConfig(s_dim=1, z_dim=2, y_dim=4, learning_rate=1e-2, batch_size=0, max_epochs=20, patience=1000)
    model = HiVaeModel.build(data, cfg, seed=0)
    batch = model.prepare(data)
    noise = model.draw_noise(np.random.default_rng(7), n)
    errors = []
    for stage in range(8):
        train(data, cfg, seed=stage, model=model)
        terms = model.elbo(model.store.constants(), batch, *noise)
        errors.append(-terms.reconstruction.mean())
    smooth = np.convolve(errors, np.ones(2) / 2, mode="valid")
    assert np.all(np.diff(smooth) < 0), errors


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_carries_last_good_model(mixed):
    cfg = SMALL.replace(learning_rate=1e-2, max_epochs=3)
    model = HiVaeModel.build(mixed, cfg, seed=0)
    good = model.store.snapshot()
    bad = mixed_dataset(mixed.n, 0)
    cov = dict(bad.covariates)
    cov["age"] = np.full(bad.n, 1e200)
    poisoned = TrialDataset(bad.schema, cov, bad.treatment, bad.time, bad.event)
    with pytest.raises(TrainingDivergence) as err:
        train(poisoned, cfg, seed=0, model=model)
    for k, v in good.items():
        np.testing.assert_array_equal(err.value.model.store[k], v)


# -- sampling ------------------------------------------------------------------------


def test_identity_decoder_reproduces_source(mixed):
    model = HiVaeModel.build(mixed, SMALL)
    arm = sample_posterior(model, mixed, mixed.n, seed=3, decoder=identity_decoder)
    order = np.argsort(arm.data.time)
    assert arm.data.take(order).equals(mixed.take(np.argsort(mixed.time)))
    big = sample_posterior(model, mixed, 2 * mixed.n + 5, seed=3, decoder=identity_decoder)
    assert big.data.n == 2 * mixed.n + 5


@given(st.integers(1, 30), st.integers(1, 100), st.integers(0, 2**32 - 1))
def test_source_schedule_cycles(n_source, n_out, seed):
    idx = source_schedule(n_source, n_out, np.random.default_rng(seed))
    assert idx.size == n_out
    counts = np.bincount(idx, minlength=n_source)
    assert counts.max() - counts.min() <= 1


def test_samples_respect_ranges(mixed):
    for head in (WEIBULL, PIECEWISE):
        model = _perturb(HiVaeModel.build(mixed, SMALL.replace(survival_head=head), seed=0), 0)
        for arm in (sample_posterior(model, mixed, 77, seed=1), sample_prior(model, 77, seed=1)):
            d = arm.data
            assert d.n == 77 and np.all(d.treatment == 0)
            assert np.all(d.covariates["dose"] > 0) and np.all(d.time > 0)
            assert np.all(d.covariates["site"] < 3)
            assert np.all(d.covariates["visits"] == np.round(d.covariates["visits"]))
    with pytest.raises(ValueError):
        sample_prior(model, 0, seed=1)


def test_sampling_is_seeded(mixed):
    model = _perturb(HiVaeModel.build(mixed, SMALL), 0)
    assert sample_posterior(model, mixed, 30, 9).data.equals(sample_posterior(model, mixed, 30, 9).data)
    assert not sample_posterior(model, mixed, 30, 9).data.equals(sample_posterior(model, mixed, 30, 10).data)


def test_prior_degenerate_mixture_ignores_s(mixed):
    model = HiVaeModel.build(mixed, SMALL.replace(s_dim=1), seed=0)
    H = model.config.y_dim
    for j in range(len(model.features)):
        model.store.params[f"head.{j}.W"][:H] = 0.0
    for which in ("T", "C"):
        model.store.params[f"surv.{which}.0.W"][:H] = 0.0
    params = model.store.constants()
    z = np.random.default_rng(0).normal(size=(20, model.config.z_dim))
    feats, out_t, _ = model.decode(params, nn.Tensor(z), nn.Tensor(np.ones((20, 1))))
    for out in feats + [out_t]:
        assert np.ptp(out.value, axis=0).max() == 0.0


def test_save_load_round_trip(tmp_path, mixed):
    model = _perturb(HiVaeModel.build(mixed, SMALL.replace(survival_head=PIECEWISE)), 5)
    model.save(tmp_path / "m.json")
    back = HiVaeModel.load(tmp_path / "m.json")
    assert back.digest() == model.digest()
    np.testing.assert_array_equal(back.edges, model.edges)
    assert sample_posterior(back, mixed, 20, 1).data.equals(sample_posterior(model, mixed, 20, 1).data)
    doc = json.loads((tmp_path / "m.params.json").read_text())
    doc["params"]["prior.mu"]["data"][0] += 1.0
    (tmp_path / "m.params.json").write_text(json.dumps(doc))
    with pytest.raises(ModelError, match="digest"):
        HiVaeModel.load(tmp_path / "m.json")


def test_config_validation():
    with pytest.raises(ValueError):
        HiVaeConfig(s_dim=0)
    with pytest.raises(ValueError):
        HiVaeConfig(survival_head="cox")
    with pytest.raises(ValueError):
        HiVaeConfig.from_json({"nope": 1})
    cfg = HiVaeConfig(z_dim=7)
    assert HiVaeConfig.from_json(cfg.to_json()) == cfg


# -- fitted model on the simulated default -------------------------------------------


@pytest.fixture(scope="module")
def fitted(sim_default):
    control = split_arms(sim_default)[0]
    cfg = HiVaeConfig(learning_rate=1e-2, batch_size=100, max_epochs=150, patience=15)
    return control, train(control, cfg, seed=0).model


def test_generated_censoring_close_to_training(fitted):
    control, model = fitted
    arm = sample_posterior(model, control, 1000, seed=2)
    assert abs(arm.data.censoring_fraction() - control.censoring_fraction()) <= 0.10
    assert arm.data.n == 1000


def test_prior_and_posterior_samples_valid(fitted):
    control, model = fitted
    prior = sample_prior(model, 300, seed=4).data
    post = sample_posterior(model, control, 300, seed=4).data
    for arm in (prior, post):
        assert arm.schema == control.schema
        d = js_distance(control, arm)
        assert 0.0 <= d < 1.0 and math.isfinite(d)

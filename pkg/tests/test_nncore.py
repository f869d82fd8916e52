import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from synthtrial import nncore as nn


def _mlp_loss(x, y):
    def fn(p):
        h = nn.dense_forward(x, p["W1"], p["b1"], "tanh")
        out = nn.dense_forward(h, p["W2"], p["b2"], "softplus")
        return nn.mean(nn.square(out - y))

    return fn


def test_dense_zero_weights():
    out = nn.dense_forward(np.ones((2, 3)), np.zeros((3, 4)), np.zeros(4))
    np.testing.assert_array_equal(out.value, np.zeros((2, 4)))


def test_softmax_symmetric():
    np.testing.assert_array_equal(nn.softmax(np.zeros((1, 2))).value, [[0.5, 0.5]])


def test_dense_shape_mismatch():
    with pytest.raises(ValueError, match="shape mismatch"):
        nn.dense_forward(np.ones((2, 3)), np.zeros((4, 4)), np.zeros(4))
    with pytest.raises(ValueError):
        nn.Dense("d", 2, 2, "swish")


@pytest.mark.parametrize("act", ["identity", "tanh", "relu", "softplus", "softmax"])
def test_dense_layer_grad(act):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 3))
    params = {"W": rng.normal(size=(3, 4)), "b": rng.normal(size=4)}
    rep = nn.grad_check(lambda p: nn.tsum(nn.square(nn.dense_forward(x, p["W"], p["b"], act))), params)
    assert rep.max_rel_error < 1e-5, rep


def test_mlp_grad_check():
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(8, 3)), rng.normal(size=(8, 2))
    params = {"W1": rng.normal(size=(3, 5)), "b1": rng.normal(size=5), "W2": rng.normal(size=(5, 2)), "b2": rng.normal(size=2)}
    rep = nn.grad_check(_mlp_loss(x, y), params)
    assert rep.passed and rep.max_rel_error < 1e-5


def test_linear_function_grad_is_exact():
    a = np.array([1.5, -2.0, 0.25])
    rep = nn.grad_check(lambda p: nn.tsum(p["w"] * a), {"w": np.array([0.1, 0.2, 0.3])})
    assert rep.max_rel_error < 1e-9


def test_corrupted_gradient_is_caught():
    params = {"w": np.array([0.3, -0.7])}
    rep = nn.grad_check(lambda p: nn.tsum(nn.exp(p["w"])), params, analytic={"w": np.exp(params["w"]) * 1.01})
    assert not rep.passed and rep.worst == "w"


@pytest.mark.parametrize(
    "op",
    [
        lambda a, b: a * b + a / (nn.exp(b) + 1.0),
        lambda a, b: nn.log_softmax(a @ nn.reshape(b, (3, 3)), axis=1),
        lambda a, b: nn.logsumexp(a, axis=0) - nn.sigmoid(nn.tsum(b)),
        lambda a, b: nn.concat([nn.relu(a), nn.tanh(a)], axis=1)[:, 1:4] ** 2,
        lambda a, b: nn.maximum(a, 0.1) - (1.0 - a) + nn.softplus(-a),
        lambda a, b: nn.mean(a, axis=1, keepdims=True) * nn.reshape(b, (1, 9))[:, :3],
    ],
)
def test_primitive_gradients(op):
    rng = np.random.default_rng(2)
    params = {"a": rng.normal(size=(4, 3)), "b": rng.normal(size=9)}

    def fn(p):
        b = p["b"] if "reshape" in op.__code__.co_names else p["b"][:3]
        out = op(p["a"], b)
        return nn.tsum(out * out)

    rep = nn.grad_check(fn, params)
    assert rep.max_rel_error < 1e-5, rep.per_param


def test_fan_out_accumulates_once():
    x = nn.parameter(np.array(3.0))
    y = x * x + x
    z = y * y
    z.backward()
    # dz/dx = 2 y (2x + 1) = 2 * 12 * 7
    assert x.grad == pytest.approx(168.0)


def test_gaussian_reparameterize():
    mu = np.array([0.4, -1.0])
    np.testing.assert_array_equal(nn.gaussian_reparameterize(mu, np.array([0.3, 2.0]), np.zeros(2)).value, mu)
    assert nn.gaussian_reparameterize(0.0, 0.0, 1.3).value == pytest.approx(1.3)
    eps = np.array([0.7, -1.1])
    params = {"mu": mu, "lv": np.array([0.3, -0.4])}
    rep = nn.grad_check(lambda p: nn.tsum(nn.gaussian_reparameterize(p["mu"], p["lv"], eps)), params)
    assert rep.passed
    mu_t, lv_t = nn.parameter(mu), nn.parameter(params["lv"])
    nn.tsum(nn.gaussian_reparameterize(mu_t, lv_t, eps)).backward()
    np.testing.assert_allclose(mu_t.grad, 1.0)
    np.testing.assert_allclose(lv_t.grad, 0.5 * np.exp(0.5 * params["lv"]) * eps)


def test_gumbel_softmax_examples():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(5, 4))
    noise = nn.sample_gumbel(rng, (5, 4))
    out = nn.gumbel_softmax(logits, 1.0, noise).value
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
    cold = nn.gumbel_softmax(logits, 0.01, noise).value
    hard = np.eye(4)[np.argmax(logits + noise, axis=1)]
    assert np.max(np.abs(cold - hard)) < 1e-3
    np.testing.assert_allclose(nn.gumbel_softmax(np.zeros((1, 4)), 0.7, np.zeros((1, 4))).value, 0.25)
    with pytest.raises(ValueError):
        nn.gumbel_softmax(logits, 0.0, noise)


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 5.0))
def test_gumbel_softmax_in_simplex(seed, tau):
    rng = np.random.default_rng(seed)
    out = nn.gumbel_softmax(rng.normal(size=(3, 6)), tau, nn.sample_gumbel(rng, (3, 6))).value
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(out >= 0) and np.all(out <= 1)
    if tau >= 1.0:
        # strict interior; at low temperature double precision can round an entry to 0 or 1
        assert np.all(out > 0) and np.all(out < 1)


def test_adam_zero_gradient():
    store = nn.ParamStore()
    store.add("w", np.array([1.0, -2.0]))
    store.m["w"][:] = 0.5
    store.v["w"][:] = 0.25
    nn.adam_step(store, {"w": np.zeros(2)}, lr=0.1)
    # bias-corrected moments shrink but stay nonzero, so a small step still happens;
    # from fresh moments a zero gradient leaves the parameters untouched
    np.testing.assert_allclose(store.m["w"], 0.45)
    np.testing.assert_allclose(store.v["w"], 0.25 * 0.999)
    fresh = nn.ParamStore()
    fresh.add("w", np.array([1.0, -2.0]))
    nn.adam_step(fresh, {"w": np.zeros(2)}, lr=0.1)
    np.testing.assert_array_equal(fresh["w"], [1.0, -2.0])


def test_adam_quadratic_converges():
    store = nn.ParamStore()
    store.add("w", np.array(1.0))
    for _ in range(500):
        nn.adam_step(store, {"w": 2.0 * store["w"]}, lr=0.1)
    assert abs(store["w"]) < 1e-3


def test_adam_first_step_is_lr():
    store = nn.ParamStore()
    store.add("w", np.array([0.0, 0.0]))
    nn.adam_step(store, {"w": np.array([3.0, -0.02])}, lr=0.01)
    np.testing.assert_allclose(store["w"], [-0.01, 0.01], rtol=1e-5)


def test_adam_rejects_non_finite():
    store = nn.ParamStore()
    store.add("w", np.array([1.0]))
    with pytest.raises(nn.NonFiniteError):
        nn.adam_step(store, {"w": np.array([np.nan])}, lr=0.1)
    assert store["w"][0] == 1.0 and store.step == 0
    with pytest.raises(ValueError):
        nn.adam_step(store, {"w": np.zeros(3)}, lr=0.1)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=20))
def test_adam_deterministic(grads):
    def run():
        s = nn.ParamStore()
        s.add("w", np.array([0.5]))
        for g in grads:
            nn.adam_step(s, {"w": np.array([g])}, lr=0.05)
        return s["w"].copy(), s.m["w"].copy(), s.v["w"].copy()

    for a, b in zip(run(), run()):
        np.testing.assert_array_equal(a, b)


def test_glorot_bounds():
    w = nn.glorot_uniform(np.random.default_rng(0), 30, 10)
    assert np.all(np.abs(w) <= math.sqrt(6 / 40))


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    store = nn.ParamStore()
    store.add("a.W", rng.normal(size=(3, 2)))
    store.add("a.b", rng.normal(size=2))
    store.add("s", np.array(1 / 3))
    nn.adam_step(store, {k: rng.normal(size=store[k].shape) for k in store}, lr=0.1)
    nn.save_checkpoint(tmp_path / "c.json", store, {"tag": 1}, include_optimizer=True)
    back, meta = nn.load_checkpoint(tmp_path / "c.json")
    assert meta == {"tag": 1} and back.step == 1
    for k in store:
        np.testing.assert_array_equal(back[k], store[k])
        np.testing.assert_array_equal(back.m[k], store.m[k])
        assert back[k].shape == store[k].shape
    nn.save_checkpoint(tmp_path / "d.json", back, {"tag": 1}, include_optimizer=True)
    assert (tmp_path / "c.json").read_bytes() == (tmp_path / "d.json").read_bytes()


def test_checkpoint_rejects_foreign_documents():
    with pytest.raises(ValueError):
        nn.params_from_json({"format": "other"})
    with pytest.raises(ValueError):
        nn.params_from_json({"format": nn.CHECKPOINT_FORMAT, "version": 99})


def test_param_store_shapes_fixed():
    store = nn.ParamStore()
    store.add("w", np.zeros(3))
    with pytest.raises(ValueError):
        store.assign({"w": np.zeros(4)})
    with pytest.raises(KeyError):
        store.add("w", np.zeros(3))

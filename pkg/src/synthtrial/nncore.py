"""Small reverse-mode autodiff engine over numpy, plus the training utilities
the HI-VAE needs (dense layers, Adam, reparameterized sampling, gradient
checks, checkpoints). Everything runs in float64."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

CHECKPOINT_FORMAT = "synthtrial-params"
CHECKPOINT_VERSION = 1


class NonFiniteError(FloatingPointError):
    """A forward value or a gradient stopped being finite."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A node of the computation record: forward value, accumulated gradient and
    a closure that pushes the output gradient to the parents."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad")
    __array_priority__ = 100.0

    def __init__(self, value, parents: tuple = (), backward_fn=None, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        self.grad = g.copy() if self.grad is None else self.grad + g

    def backward(self, seed=None):
        """Reverse sweep from this node; each node is visited once, in reverse topological order."""
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.value) if seed is None else np.asarray(seed, dtype=float))
        for node in reversed(order):
            if node.backward_fn is not None and node.grad is not None:
                node.backward_fn(node.grad)

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __pow__(self, k):
        return power(self, k)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(value) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True)


def _node(value, parents, backward_fn) -> Tensor:
    out = Tensor(value, parents)
    if out.requires_grad:
        out.backward_fn = backward_fn
    return out


def _send(t: Tensor, g):
    if t.requires_grad:
        t._accumulate(_unbroadcast(g, t.shape))


# -- elementwise ----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _send(a, g)
        _send(b, g)

    return _node(a.value + b.value, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _send(a, g)
        _send(b, -g)

    return _node(a.value - b.value, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _send(a, g * b.value)
        _send(b, g * a.value)

    return _node(a.value * b.value, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value / b.value

    def bw(g):
        _send(a, g / b.value)
        _send(b, -g * out / b.value)

    return _node(out, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.value, (a,), lambda g: _send(a, -g))


def power(a, k: float) -> Tensor:
    a = as_tensor(a)
    return _node(a.value**k, (a,), lambda g: _send(a, g * k * a.value ** (k - 1)))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.value**2, (a,), lambda g: _send(a, 2.0 * g * a.value))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: _send(a, g * out))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.value), (a,), lambda g: _send(a, g / a.value))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: _send(a, g * (1.0 - out**2)))


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.maximum(a.value, 0.0), (a,), lambda g: _send(a, g * (a.value > 0)))


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.value)
    return _node(out, (a,), lambda g: _send(a, g * out * (1.0 - out)))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.logaddexp(0.0, a.value), (a,), lambda g: _send(a, g * _sigmoid(a.value)))


def maximum(a, floor: float) -> Tensor:
    """max(a, floor) against a constant; the gradient is zero where the floor is active."""
    a = as_tensor(a)
    return _node(np.maximum(a.value, floor), (a,), lambda g: _send(a, g * (a.value > floor)))


# -- reductions and shape ---------------------------------------------------------


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _send(a, np.broadcast_to(g, a.shape))

    return _node(a.value.sum(axis=axis, keepdims=keepdims), (a,), bw)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.value.reshape(shape), (a,), lambda g: _send(a, g.reshape(a.shape)))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.value)
        np.add.at(full, idx, g)
        _send(a, full)

    return _node(a.value[idx], (a,), bw)


def concat(tensors, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.value for t in ts], axis=axis)
    ax = axis % out.ndim
    cuts = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def bw(g):
        for t, piece in zip(ts, np.split(g, cuts, axis=ax)):
            _send(t, piece)

    return _node(out, tuple(ts), bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _send(a, g @ np.swapaxes(b.value, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b.value))
        if b.requires_grad:
            if a.ndim == 1:
                _send(b, np.multiply.outer(a.value, g))
            else:
                _send(b, np.swapaxes(a.value, -1, -2) @ g)

    return _node(a.value @ b.value, (a, b), bw)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    p = np.exp(out)
    return _node(out, (a,), lambda g: _send(a, g - p * g.sum(axis=axis, keepdims=True)))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    return _node(out, (a,), lambda g: _send(a, out * (g - (g * out).sum(axis=axis, keepdims=True))))


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    m = a.value.max(axis=axis, keepdims=True)
    s = np.log(np.exp(a.value - m).sum(axis=axis, keepdims=True)) + m
    p = np.exp(a.value - s)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        _send(a, g * p)

    return _node(s if keepdims else np.squeeze(s, axis=axis), (a,), bw)


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "identity": lambda x: x,
    "tanh": tanh,
    "relu": relu,
    "softplus": softplus,
    "softmax": softmax,
}


# -- parameters -------------------------------------------------------------------


class ParamStore:
    """Named float64 parameter arrays with their Adam moments."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> np.ndarray:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already exists")
        arr = np.array(value, dtype=np.float64)
        self.params[name] = arr
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        return arr

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def size(self) -> int:
        return int(sum(a.size for a in self.params.values()))

    def leaves(self) -> dict[str, Tensor]:
        """Fresh differentiable leaves for one forward pass."""
        return {k: Tensor(v, requires_grad=True) for k, v in self.params.items()}

    def constants(self) -> dict[str, Tensor]:
        return {k: Tensor(v) for k, v in self.params.items()}

    def assign(self, values: Mapping[str, np.ndarray]):
        for k, v in values.items():
            v = np.asarray(v, dtype=np.float64)
            if v.shape != self.params[k].shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} != {self.params[k].shape}")
            self.params[k] = v.copy()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k in self.params:
            out.params[k] = self.params[k].copy()
            out.m[k] = self.m[k].copy()
            out.v[k] = self.v[k].copy()
        out.step = self.step
        return out


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass(frozen=True)
class Dense:
    name: str
    in_dim: int
    out_dim: int
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def init(self, store: ParamStore, rng: np.random.Generator):
        store.add(f"{self.name}.W", glorot_uniform(rng, self.in_dim, self.out_dim))
        store.add(f"{self.name}.b", np.zeros(self.out_dim))

    def __call__(self, params: Mapping[str, Tensor], x) -> Tensor:
        return dense_forward(x, params[f"{self.name}.W"], params[f"{self.name}.b"], self.activation)


def dense_forward(x, weights, bias, activation: str = "identity") -> Tensor:
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    if x.shape[-1] != weights.shape[0] or weights.shape[-1] != bias.shape[-1]:
        raise ValueError(f"shape mismatch: input {x.shape}, weights {weights.shape}, bias {bias.shape}")
    try:
        act = ACTIVATIONS[activation]
    except KeyError:
        raise ValueError(f"unknown activation {activation!r}") from None
    return act(x @ weights + bias)


# -- optimizer ----------------------------------------------------------------------


def adam_step(store: ParamStore, grads: Mapping[str, np.ndarray], lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> ParamStore:
    """One bias-corrected Adam descent step, in place. Non-finite gradients leave the store untouched."""
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NonFiniteError(f"non-finite gradient for {', '.join(sorted(bad))}; step rejected")
    for k, g in grads.items():
        if g.shape != store.params[k].shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {k} {store.params[k].shape}")
    store.step += 1
    c1 = 1.0 - beta1**store.step
    c2 = 1.0 - beta2**store.step
    for k in store.params:
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(store.params[k])
        store.m[k] = beta1 * store.m[k] + (1.0 - beta1) * g
        store.v[k] = beta2 * store.v[k] + (1.0 - beta2) * g * g
        store.params[k] = store.params[k] - lr * (store.m[k] / c1) / (np.sqrt(store.v[k] / c2) + eps)
    return store


# -- reparameterized sampling ------------------------------------------------------------


def gaussian_reparameterize(mu, logvar, noise) -> Tensor:
    return as_tensor(mu) + exp(as_tensor(logvar) * 0.5) * np.asarray(noise, dtype=float)


def sample_gumbel(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.random(shape)
    u = np.clip(u, np.finfo(float).tiny, 1.0 - np.finfo(float).eps)
    return -np.log(-np.log(u))


def gumbel_softmax(logits, temperature: float, noise) -> Tensor:
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return softmax((as_tensor(logits) + np.asarray(noise, dtype=float)) * (1.0 / temperature))


# -- gradient checking ---------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float]
    tolerance: float
    worst: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def relative_error(a, n) -> np.ndarray:
    a, n = np.asarray(a, float), np.asarray(n, float)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)


def grad_check(fn: Callable[[dict], Tensor], params: Mapping[str, np.ndarray], tolerance: float = 1e-5, analytic: Mapping[str, np.ndarray] | None = None, step: float = 1e-5) -> GradCheckReport:
    """Compare reverse-mode gradients of the scalar ``fn(leaves)`` with central differences.

    ``analytic`` overrides the reverse-mode gradient (used to feed a corrupted
    gradient as a negative control). The difference step for entry theta is
    ``step * max(1, |theta|)``.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    if analytic is None:
        leaves = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
        out = fn(leaves)
        if out.value.size != 1:
            raise ValueError("grad_check needs a scalar-valued function")
        out.backward()
        analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.value)) for k, t in leaves.items()}

    def value_at(vals):
        return float(fn({k: Tensor(v) for k, v in vals.items()}).value)

    per_param = {}
    for name, arr in params.items():
        num = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            h = step * max(1.0, abs(flat[i]))
            orig = flat[i]
            flat[i] = orig + h
            up = value_at(params)
            flat[i] = orig - h
            down = value_at(params)
            flat[i] = orig
            num.reshape(-1)[i] = (up - down) / (2.0 * h)
        err = relative_error(analytic[name], num)
        per_param[name] = float(err.max()) if err.size else 0.0
    worst = max(per_param, key=per_param.get) if per_param else ""
    return GradCheckReport(per_param.get(worst, 0.0), per_param, tolerance, worst)


# -- checkpoints ------------------------------------------------------------------------


def params_to_json(store: ParamStore, metadata: Mapping | None = None, include_optimizer: bool = False) -> dict:
    """JSON-of-arrays: every array as ``{"shape": [...], "data": [...]}`` in C order.

    Floats are written with their shortest round-trip repr, so loading is exact.
    """

    def enc(a):
        return {"shape": list(a.shape), "data": a.reshape(-1).tolist()}

    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "metadata": dict(metadata or {}),
        "params": {k: enc(store.params[k]) for k in sorted(store.params)},
    }
    if include_optimizer:
        doc["optimizer"] = {
            "step": store.step,
            "m": {k: enc(store.m[k]) for k in sorted(store.m)},
            "v": {k: enc(store.v[k]) for k in sorted(store.v)},
        }
    return doc


def params_from_json(doc: Mapping) -> tuple[ParamStore, dict]:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a parameter checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")

    def dec(obj):
        return np.array(obj["data"], dtype=np.float64).reshape(obj["shape"])

    store = ParamStore()
    for k, obj in doc["params"].items():
        store.add(k, dec(obj))
    opt = doc.get("optimizer")
    if opt:
        store.step = int(opt["step"])
        for k in store.params:
            store.m[k] = dec(opt["m"][k])
            store.v[k] = dec(opt["v"][k])
    return store, dict(doc.get("metadata", {}))


def save_checkpoint(path, store: ParamStore, metadata: Mapping | None = None, include_optimizer: bool = False):
    Path(path).write_text(json.dumps(params_to_json(store, metadata, include_optimizer), sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    return params_from_json(json.loads(Path(path).read_text()))

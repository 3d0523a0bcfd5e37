"""Minimal fully-connected network with analytic backprop and AdamW.

Hidden layers use SELU; the output layer is linear unless the net is built
with ``activate_output=True`` (used for the branch nets of the transition
model, whose outputs feed further layers).
"""

from __future__ import annotations

import json

import numpy as np

from . import kernels
from .errors import DatasetParseError, ValidationError


class Mlp:
    def __init__(self, layer_dims, weights, biases, activate_output=False):
        self.layer_dims = list(layer_dims)
        self.weights = weights
        self.biases = biases
        self.activate_output = activate_output

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]


def init_mlp(layer_dims, rng: np.random.Generator, activate_output=False) -> Mlp:
    """Uniform init in +-sqrt(1/fan_in), keeps SELU pre-activations in range."""
    if len(layer_dims) < 2 or any(d < 1 for d in layer_dims):
        raise ValidationError(f"bad layer dims {layer_dims!r}")
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = np.sqrt(1.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return Mlp(layer_dims, weights, biases, activate_output)


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def forward(m: Mlp, x: np.ndarray) -> np.ndarray:
    """Forward pass; accepts a single vector or a (batch, in_dim) array."""
    y, cache = forward_cached(m, x)
    return y[0] if cache.squeeze else y


class _Cache:
    __slots__ = ("x", "pres", "acts", "squeeze")

    def __init__(self, x, pres, acts, squeeze):
        self.x = x
        self.pres = pres
        self.acts = acts
        self.squeeze = squeeze


def forward_cached(m: Mlp, x):
    x2d, squeeze = _as_batch(x)
    if x2d.shape[1] != m.input_dim:
        raise ValidationError(f"input dim {x2d.shape[1]} != expected {m.input_dim}")
    n_layers = len(m.weights)
    pres, acts = [], [x2d]
    h = x2d
    for l in range(n_layers):
        pre = h @ m.weights[l] + m.biases[l]
        pres.append(pre)
        if l < n_layers - 1 or m.activate_output:
            h = kernels.selu(pre)
        else:
            h = pre
        if l < n_layers - 1:
            acts.append(h)
    return h, _Cache(x2d, pres, acts, squeeze)


def backward(m: Mlp, cache: _Cache, upstream: np.ndarray):
    """Gradients of a scalar loss given d(loss)/d(output).

    Returns (grads, dx) where grads is [(dW, db), ...] per layer.
    """
    up, _ = _as_batch(upstream)
    n_layers = len(m.weights)
    if up.shape != (cache.x.shape[0], m.output_dim):
        raise ValidationError(f"upstream shape {up.shape} does not match output")
    grads = [None] * n_layers
    g = up
    for l in range(n_layers - 1, -1, -1):
        if l < n_layers - 1 or m.activate_output:
            dpre = kernels.selu_backward(cache.pres[l], g)
        else:
            dpre = g
        grads[l] = (cache.acts[l].T @ dpre, dpre.sum(axis=0))
        g = dpre @ m.weights[l].T
    return grads, g


def parameters(m: Mlp, prefix: str = ""):
    """Parameter arrays with stable names, in declaration order."""
    names, arrays = [], []
    for l, (w, b) in enumerate(zip(m.weights, m.biases)):
        names.append(f"{prefix}layer{l}.weight")
        arrays.append(w)
        names.append(f"{prefix}layer{l}.bias")
        arrays.append(b)
    return names, arrays


def flatten_grads(grads):
    """Flatten backward() output to match parameters() order."""
    out = []
    for dw, db in grads:
        out.append(dw)
        out.append(db)
    return out


class AdamW:
    """Decoupled weight decay Adam over a list of parameter arrays.

    Each step scales parameters by (1 - lr * weight_decay) before the Adam
    update. Updates are in place.
    """

    def __init__(self, params, names=None, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.names = list(names) if names is not None else [f"param{i}" for i in range(len(self.params))]
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = [np.zeros(p.size) for p in self.params]
        self.v = [np.zeros(p.size) for p in self.params]

    def step(self, grads) -> None:
        if len(grads) != len(self.params):
            raise ValidationError(f"got {len(grads)} gradients for {len(self.params)} parameters")
        for name, g in zip(self.names, grads):
            if not np.all(np.isfinite(g)):
                raise ValidationError(f"non-finite gradient for {name}")
        self.step_count += 1
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            kernels.adamw_update(
                p.ravel(), g, m, v, self.step_count,
                self.lr, self.beta1, self.beta2, self.eps, self.weight_decay,
            )


def mlp_to_dict(m: Mlp) -> dict:
    return {
        "layer_dims": m.layer_dims,
        "activation": "selu",
        "activate_output": m.activate_output,
        "weights": [w.tolist() for w in m.weights],
        "biases": [b.tolist() for b in m.biases],
    }


def mlp_from_dict(d: dict) -> Mlp:
    dims = d["layer_dims"]
    weights = [np.asarray(w, dtype=np.float64) for w in d["weights"]]
    biases = [np.asarray(b, dtype=np.float64) for b in d["biases"]]
    for w, (fi, fo) in zip(weights, zip(dims[:-1], dims[1:])):
        if w.shape != (fi, fo):
            raise DatasetParseError(f"weight shape {w.shape} inconsistent with dims {dims}")
    return Mlp(dims, weights, biases, d.get("activate_output", False))


def save_mlp(m: Mlp, path) -> None:
    with open(path, "w") as fh:
        json.dump(mlp_to_dict(m), fh)


def load_mlp(path) -> Mlp:
    try:
        with open(path) as fh:
            return mlp_from_dict(json.load(fh))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DatasetParseError(f"corrupt checkpoint {path}: {exc}") from exc

"""Hot numeric kernels with two interchangeable backends.

Every kernel exists twice: a numba ``@njit`` version (default when numba is
importable) and a pure-numpy fallback. The active backend is chosen at import
time from the ``MADNAV_BACKEND`` environment variable (``"numba"``,
``"numpy"`` or ``"auto"``) and can be switched at runtime with
:func:`set_backend`; ``benchmarks/bench_backends.py`` compares the two.

All kernels operate on float64 C-contiguous arrays.
"""

from __future__ import annotations

import logging
import math
import os

import numpy as np

from .errors import ConfigError

log = logging.getLogger(__name__)

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
    HAVE_NUMBA = False

# Canonical SELU constants.
SELU_ALPHA = 1.6732632423543772
SELU_LAMBDA = 1.0507009873554805

_LAM_ALPHA = SELU_LAMBDA * SELU_ALPHA


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _np_selu(x):
    neg = _LAM_ALPHA * np.expm1(np.minimum(x, 0.0))
    return np.where(x > 0.0, SELU_LAMBDA * x, neg)


def _np_selu_backward(pre, upstream):
    slope = np.where(pre > 0.0, SELU_LAMBDA, _LAM_ALPHA * np.exp(np.minimum(pre, 0.0)))
    return upstream * slope


def _np_adamw(p, g, m, v, bc1, bc2, lr, beta1, beta2, eps, decay_factor):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    p *= decay_factor
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def _np_pair_loss(z, zp, d, alpha, use_penalty, norm_p):
    diff = z - zp
    if norm_p == 1:
        dist = np.abs(diff).sum(axis=1)
    else:
        dist = np.sqrt((diff * diff).sum(axis=1))
    w = d ** (-alpha)
    resid = dist - d
    viol = np.maximum(resid, 0.0)
    per_penalty = w * viol * viol
    per_loss = w * resid * resid + per_penalty
    if not use_penalty:
        per_loss = per_loss - per_penalty
    # d/d(dist) of the per-sample loss
    g_dist = 2.0 * w * resid
    if use_penalty:
        g_dist = g_dist + 2.0 * w * viol
    if norm_p == 1:
        dz = g_dist[:, None] * np.sign(diff)
    else:
        safe = np.where(dist > 0.0, dist, 1.0)
        dz = (g_dist / safe)[:, None] * diff
        dz[dist == 0.0] = 0.0
    return float(per_loss.sum()), per_loss, per_penalty, dist, dz


def _np_cdist(a, b, norm_p):
    diff = a[:, None, :] - b[None, :, :]
    if norm_p == 1:
        return np.abs(diff).sum(axis=2)
    return np.sqrt((diff * diff).sum(axis=2))


def _np_dist_rows(a, b, norm_p):
    diff = a - b
    if norm_p == 1:
        return np.abs(diff).sum(axis=1)
    return np.sqrt((diff * diff).sum(axis=1))


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _nb_selu(x):
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                v = x[i, j]
                if v > 0.0:
                    out[i, j] = SELU_LAMBDA * v
                else:
                    out[i, j] = _LAM_ALPHA * (math.exp(v) - 1.0)
        return out

    @njit(cache=True)
    def _nb_selu_backward(pre, upstream):
        out = np.empty_like(pre)
        for i in range(pre.shape[0]):
            for j in range(pre.shape[1]):
                v = pre[i, j]
                slope = SELU_LAMBDA if v > 0.0 else _LAM_ALPHA * math.exp(v)
                out[i, j] = upstream[i, j] * slope
        return out

    @njit(cache=True)
    def _nb_adamw(p, g, m, v, bc1, bc2, lr, beta1, beta2, eps, decay_factor):
        for i in range(p.shape[0]):
            gi = g[i]
            mi = beta1 * m[i] + (1.0 - beta1) * gi
            vi = beta2 * v[i] + (1.0 - beta2) * gi * gi
            m[i] = mi
            v[i] = vi
            p[i] = p[i] * decay_factor - lr * (mi / bc1) / (math.sqrt(vi / bc2) + eps)

    @njit(cache=True)
    def _nb_pair_loss(z, zp, d, alpha, use_penalty, norm_p):
        n, dim = z.shape
        per_loss = np.empty(n)
        per_penalty = np.empty(n)
        dist = np.empty(n)
        dz = np.empty((n, dim))
        total = 0.0
        for i in range(n):
            acc = 0.0
            if norm_p == 1:
                for j in range(dim):
                    acc += abs(z[i, j] - zp[i, j])
            else:
                for j in range(dim):
                    df = z[i, j] - zp[i, j]
                    acc += df * df
                acc = math.sqrt(acc)
            dist[i] = acc
            w = d[i] ** (-alpha)
            resid = acc - d[i]
            viol = resid if resid > 0.0 else 0.0
            pen = w * viol * viol
            per_penalty[i] = pen
            li = w * resid * resid
            if use_penalty:
                li += pen
            per_loss[i] = li
            total += li
            g_dist = 2.0 * w * resid
            if use_penalty:
                g_dist += 2.0 * w * viol
            if norm_p == 1:
                for j in range(dim):
                    df = z[i, j] - zp[i, j]
                    s = 0.0
                    if df > 0.0:
                        s = 1.0
                    elif df < 0.0:
                        s = -1.0
                    dz[i, j] = g_dist * s
            else:
                if acc > 0.0:
                    scale = g_dist / acc
                    for j in range(dim):
                        dz[i, j] = scale * (z[i, j] - zp[i, j])
                else:
                    for j in range(dim):
                        dz[i, j] = 0.0
        return total, per_loss, per_penalty, dist, dz

    @njit(cache=True)
    def _nb_cdist(a, b, norm_p):
        n, dim = a.shape
        m = b.shape[0]
        out = np.empty((n, m))
        for i in range(n):
            for k in range(m):
                acc = 0.0
                if norm_p == 1:
                    for j in range(dim):
                        acc += abs(a[i, j] - b[k, j])
                else:
                    for j in range(dim):
                        df = a[i, j] - b[k, j]
                        acc += df * df
                    acc = math.sqrt(acc)
                out[i, k] = acc
        return out

    @njit(cache=True)
    def _nb_dist_rows(a, b, norm_p):
        n, dim = a.shape
        out = np.empty(n)
        for i in range(n):
            acc = 0.0
            if norm_p == 1:
                for j in range(dim):
                    acc += abs(a[i, j] - b[i, j])
            else:
                for j in range(dim):
                    df = a[i, j] - b[i, j]
                    acc += df * df
                acc = math.sqrt(acc)
            out[i] = acc
        return out


# ---------------------------------------------------------------------------
# backend selection
# ---------------------------------------------------------------------------

_IMPLS = {
    "numpy": {
        "selu": _np_selu,
        "selu_backward": _np_selu_backward,
        "adamw": _np_adamw,
        "pair_loss": _np_pair_loss,
        "cdist": _np_cdist,
        "dist_rows": _np_dist_rows,
    }
}
if HAVE_NUMBA:
    _IMPLS["numba"] = {
        "selu": _nb_selu,
        "selu_backward": _nb_selu_backward,
        "adamw": _nb_adamw,
        "pair_loss": _nb_pair_loss,
        "cdist": _nb_cdist,
        "dist_rows": _nb_dist_rows,
    }

_active = {}


def set_backend(name: str) -> None:
    """Select the kernel backend: "numba" or "numpy"."""
    if name not in ("numpy", "numba"):
        raise ConfigError(f"unknown kernel backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise ConfigError("numba backend requested but numba is not importable")
    _active.clear()
    _active.update(_IMPLS[name])
    _active["name"] = name


def active_backend() -> str:
    return _active["name"]


def _initial_backend() -> str:
    requested = os.environ.get("MADNAV_BACKEND", "auto").strip().lower()
    if requested in ("", "auto"):
        return "numba" if HAVE_NUMBA else "numpy"
    if requested == "numba" and not HAVE_NUMBA:
        log.warning("MADNAV_BACKEND=numba but numba is unavailable; using numpy")
        return "numpy"
    if requested not in ("numpy", "numba"):
        raise ConfigError(f"MADNAV_BACKEND={requested!r} is not 'numpy', 'numba' or 'auto'")
    return requested


set_backend(_initial_backend())


# ---------------------------------------------------------------------------
# public API (dispatching wrappers)
# ---------------------------------------------------------------------------


def _c64(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def selu(x: np.ndarray) -> np.ndarray:
    return _active["selu"](_c64(x))


def selu_backward(pre: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    return _active["selu_backward"](_c64(pre), _c64(upstream))


def adamw_update(param, grad, m, v, step, lr, beta1, beta2, eps, weight_decay):
    """In-place decoupled-weight-decay Adam update on flat float64 arrays.

    ``step`` is the 1-based step count after this update.
    """
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    decay_factor = 1.0 - lr * weight_decay
    _active["adamw"](param, _c64(grad).ravel(), m, v, bc1, bc2, lr, beta1, beta2, eps, decay_factor)


def pair_loss(z, zp, d, alpha, use_penalty, norm_p):
    """Distance-regression loss with an upper-bound hinge penalty.

    Per sample i with embedded rows z_i, zp_i and observed step gap d_i,

        loss_i = w * (D_i - d_i)^2 + w * max(0, D_i - d_i)^2      (penalty on)

    where D_i is the L1 or L2 distance between the rows and w = d_i**-alpha.
    Returns (loss_sum, per_loss, per_penalty, dist, dz); the gradient with
    respect to zp is -dz. The L1 subgradient at a coordinate tie is 0.
    """
    return _active["pair_loss"](_c64(z), _c64(zp), _c64(d), float(alpha), bool(use_penalty), int(norm_p))


def cdist(a, b, norm_p):
    """Pairwise distance matrix between row sets a (n,d) and b (m,d)."""
    return _active["cdist"](_c64(a), _c64(b), int(norm_p))


def dist_rows(a, b, norm_p):
    """Rowwise distance between two (n,d) arrays."""
    return _active["dist_rows"](_c64(a), _c64(b), int(norm_p))

"""Hot numeric kernels with two interchangeable backends.

Matrix products stay on BLAS via ``np.matmul`` everywhere; what lives here
are the memory-bound fused loops around them: softmax, layer norm, GELU,
the two loss heads, the embedding gradient scatter, and the optimizer step.
Each has a ``numba`` ``@njit`` implementation and a pure-numpy one.

Backend selection via ``DSTLAB_KERNELS``: ``numba`` and ``numpy`` force one
side everywhere; the default ``auto`` routes each kernel to the side that
wins on this machine's profile (numba fuses the reduction-style loops, but
without SVML its scalar ``exp``/``tanh`` calls lose to numpy's SIMD
transcendentals, so softmax/GELU/loss forwards stay on numpy). Run
``benchmarks/bench_kernels.py`` to see the comparison. ``set_backend``
flips at runtime for tests and benchmarks. Both backends are deterministic
for fixed inputs; across backends they agree to float tolerance, not
bitwise.
"""

from __future__ import annotations

import math
import os

import numpy as np

_BACKENDS = ("auto", "numba", "numpy")
_active = "numpy"

# Kernels with no transcendental inner call: numba's fused single pass wins.
_NUMBA_PREFERRED = (
    "softmax_backward", "layernorm_forward", "layernorm_backward",
    "cross_entropy_backward", "adamw_step", "embedding_grad",
)

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


# --- pure numpy implementations -------------------------------------------

def _np_softmax(x2d):
    shifted = x2d - x2d.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _np_softmax_backward(dy2d, y2d):
    inner = (dy2d * y2d).sum(axis=1, keepdims=True)
    return (dy2d - inner) * y2d


def _np_layernorm_forward(x2d, gamma, beta, eps):
    mean = x2d.mean(axis=1, keepdims=True)
    var = ((x2d - mean) ** 2).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x2d - mean) * rstd
    return xhat * gamma + beta, mean[:, 0], rstd[:, 0]


def _np_layernorm_backward(dy2d, x2d, gamma, mean, rstd):
    d = x2d.shape[1]
    xhat = (x2d - mean[:, None]) * rstd[:, None]
    dgamma = (dy2d * xhat).sum(axis=0)
    dbeta = dy2d.sum(axis=0)
    dxhat = dy2d * gamma
    dx = rstd[:, None] / d * (
        d * dxhat - dxhat.sum(axis=1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
    )
    return dx, dgamma, dbeta


def _np_gelu_forward(x):
    x2 = x * x
    inner = _GELU_C * (x + _GELU_A * x2 * x)
    return 0.5 * x * (1.0 + np.tanh(inner))


def _np_gelu_backward(dy, x):
    x2 = x * x
    inner = _GELU_C * (x + _GELU_A * x2 * x)
    t = np.tanh(inner)
    sech2 = 1.0 - t * t
    local = 0.5 * (1.0 + t) + 0.5 * x * sech2 * _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
    return dy * local


def _np_cross_entropy_forward(logits2d, targets, weights):
    probs = _np_softmax(logits2d)
    picked = probs[np.arange(len(targets)), targets]
    loss = -(weights * np.log(np.maximum(picked, 1e-300))).sum()
    return float(loss), probs


def _np_cross_entropy_backward(probs, targets, weights, upstream):
    dl = probs * (weights * upstream)[:, None]
    dl[np.arange(len(targets)), targets] -= weights * upstream
    return dl


def _np_bce_forward(logits2d, labels2d, weights):
    # log(1+exp(-|z|)) form; exact for labels in {0,1}
    z = logits2d
    per = np.maximum(z, 0.0) - z * labels2d + np.log1p(np.exp(-np.abs(z)))
    loss = (per.sum(axis=1) * weights).sum()
    return float(loss)


def _np_bce_backward(logits2d, labels2d, weights, upstream):
    sig = 1.0 / (1.0 + np.exp(-logits2d))
    return (sig - labels2d) * (weights * upstream)[:, None]


def _np_adamw_step(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1 ** step)
    vhat = v / (1.0 - beta2 ** step)
    p -= lr * (mhat / (np.sqrt(vhat) + eps) + weight_decay * p)


def _np_embedding_grad(ids, dy2d, out):
    np.add.at(out, ids, dy2d)


_NUMPY_IMPL = {
    "softmax": _np_softmax,
    "softmax_backward": _np_softmax_backward,
    "layernorm_forward": _np_layernorm_forward,
    "layernorm_backward": _np_layernorm_backward,
    "gelu_forward": _np_gelu_forward,
    "gelu_backward": _np_gelu_backward,
    "cross_entropy_forward": _np_cross_entropy_forward,
    "cross_entropy_backward": _np_cross_entropy_backward,
    "bce_forward": _np_bce_forward,
    "bce_backward": _np_bce_backward,
    "adamw_step": _np_adamw_step,
    "embedding_grad": _np_embedding_grad,
}


# --- numba implementations --------------------------------------------------

_NUMBA_IMPL_CACHE: dict | None = None


def _build_numba_impl():
    global _NUMBA_IMPL_CACHE
    if _NUMBA_IMPL_CACHE is not None:
        return _NUMBA_IMPL_CACHE
    from numba import njit

    opts = dict(cache=True, fastmath=False, nogil=True)

    @njit(**opts)
    def nb_softmax(x2d):
        n, d = x2d.shape
        out = np.empty_like(x2d)
        for i in range(n):
            mx = x2d[i, 0]
            for j in range(1, d):
                if x2d[i, j] > mx:
                    mx = x2d[i, j]
            total = 0.0
            for j in range(d):
                e = np.exp(x2d[i, j] - mx)
                out[i, j] = e
                total += e
            inv = 1.0 / total
            for j in range(d):
                out[i, j] *= inv
        return out

    @njit(**opts)
    def nb_softmax_backward(dy2d, y2d):
        n, d = dy2d.shape
        dx = np.empty_like(dy2d)
        for i in range(n):
            inner = 0.0
            for j in range(d):
                inner += dy2d[i, j] * y2d[i, j]
            for j in range(d):
                dx[i, j] = (dy2d[i, j] - inner) * y2d[i, j]
        return dx

    @njit(**opts)
    def nb_layernorm_forward(x2d, gamma, beta, eps):
        n, d = x2d.shape
        y = np.empty_like(x2d)
        mean = np.empty(n, dtype=x2d.dtype)
        rstd = np.empty(n, dtype=x2d.dtype)
        for i in range(n):
            mu = 0.0
            for j in range(d):
                mu += x2d[i, j]
            mu /= d
            var = 0.0
            for j in range(d):
                diff = x2d[i, j] - mu
                var += diff * diff
            var /= d
            r = 1.0 / np.sqrt(var + eps)
            mean[i] = mu
            rstd[i] = r
            for j in range(d):
                y[i, j] = (x2d[i, j] - mu) * r * gamma[j] + beta[j]
        return y, mean, rstd

    @njit(**opts)
    def nb_layernorm_backward(dy2d, x2d, gamma, mean, rstd):
        n, d = dy2d.shape
        dx = np.empty_like(dy2d)
        dgamma = np.zeros(d, dtype=dy2d.dtype)
        dbeta = np.zeros(d, dtype=dy2d.dtype)
        for i in range(n):
            mu = mean[i]
            r = rstd[i]
            s1 = 0.0
            s2 = 0.0
            for j in range(d):
                xhat = (x2d[i, j] - mu) * r
                dxh = dy2d[i, j] * gamma[j]
                dgamma[j] += dy2d[i, j] * xhat
                dbeta[j] += dy2d[i, j]
                s1 += dxh
                s2 += dxh * xhat
            for j in range(d):
                xhat = (x2d[i, j] - mu) * r
                dxh = dy2d[i, j] * gamma[j]
                dx[i, j] = (r / d) * (d * dxh - s1 - xhat * s2)
        return dx, dgamma, dbeta

    @njit(**opts)
    def nb_gelu_forward(x):
        flat = x.ravel()
        out = np.empty_like(flat)
        for i in range(flat.size):
            v = flat[i]
            inner = _GELU_C * (v + _GELU_A * v * v * v)
            out[i] = 0.5 * v * (1.0 + np.tanh(inner))
        return out.reshape(x.shape)

    @njit(**opts)
    def nb_gelu_backward(dy, x):
        flat_x = x.ravel()
        flat_dy = dy.ravel()
        out = np.empty_like(flat_x)
        for i in range(flat_x.size):
            v = flat_x[i]
            inner = _GELU_C * (v + _GELU_A * v * v * v)
            t = np.tanh(inner)
            sech2 = 1.0 - t * t
            local = 0.5 * (1.0 + t) + 0.5 * v * sech2 * _GELU_C * (1.0 + 3.0 * _GELU_A * v * v)
            out[i] = flat_dy[i] * local
        return out.reshape(x.shape)

    @njit(**opts)
    def nb_cross_entropy_forward(logits2d, targets, weights):
        n, d = logits2d.shape
        probs = np.empty_like(logits2d)
        loss = 0.0
        for i in range(n):
            mx = logits2d[i, 0]
            for j in range(1, d):
                if logits2d[i, j] > mx:
                    mx = logits2d[i, j]
            total = 0.0
            for j in range(d):
                e = np.exp(logits2d[i, j] - mx)
                probs[i, j] = e
                total += e
            inv = 1.0 / total
            for j in range(d):
                probs[i, j] *= inv
            loss -= weights[i] * (logits2d[i, targets[i]] - mx - np.log(total))
        return loss, probs

    @njit(**opts)
    def nb_cross_entropy_backward(probs, targets, weights, upstream):
        n, d = probs.shape
        dl = np.empty_like(probs)
        for i in range(n):
            w = weights[i] * upstream
            for j in range(d):
                dl[i, j] = probs[i, j] * w
            dl[i, targets[i]] -= w
        return dl

    @njit(**opts)
    def nb_bce_forward(logits2d, labels2d, weights):
        n, d = logits2d.shape
        loss = 0.0
        for i in range(n):
            row = 0.0
            for j in range(d):
                z = logits2d[i, j]
                row += max(z, 0.0) - z * labels2d[i, j] + np.log1p(np.exp(-abs(z)))
            loss += row * weights[i]
        return loss

    @njit(**opts)
    def nb_bce_backward(logits2d, labels2d, weights, upstream):
        n, d = logits2d.shape
        dl = np.empty_like(logits2d)
        for i in range(n):
            w = weights[i] * upstream
            for j in range(d):
                sig = 1.0 / (1.0 + np.exp(-logits2d[i, j]))
                dl[i, j] = (sig - labels2d[i, j]) * w
        return dl

    @njit(**opts)
    def nb_adamw_step(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay):
        c1 = 1.0 - beta1 ** step
        c2 = 1.0 - beta2 ** step
        for i in range(p.size):
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
            mhat = m[i] / c1
            vhat = v[i] / c2
            p[i] -= lr * (mhat / (np.sqrt(vhat) + eps) + weight_decay * p[i])

    @njit(**opts)
    def nb_embedding_grad(ids, dy2d, out):
        n, d = dy2d.shape
        for i in range(n):
            row = ids[i]
            for j in range(d):
                out[row, j] += dy2d[i, j]

    def ce_forward(logits2d, targets, weights):
        loss, probs = nb_cross_entropy_forward(logits2d, targets, weights)
        return float(loss), probs

    def bce_forward(logits2d, labels2d, weights):
        return float(nb_bce_forward(logits2d, labels2d, weights))

    _NUMBA_IMPL_CACHE = {
        "softmax": nb_softmax,
        "softmax_backward": nb_softmax_backward,
        "layernorm_forward": nb_layernorm_forward,
        "layernorm_backward": nb_layernorm_backward,
        "gelu_forward": nb_gelu_forward,
        "gelu_backward": nb_gelu_backward,
        "cross_entropy_forward": ce_forward,
        "cross_entropy_backward": nb_cross_entropy_backward,
        "bce_forward": bce_forward,
        "bce_backward": nb_bce_backward,
        "adamw_step": nb_adamw_step,
        "embedding_grad": nb_embedding_grad,
    }
    return _NUMBA_IMPL_CACHE


_IMPL = dict(_NUMPY_IMPL)


def set_backend(name: str) -> str:
    """Activate a backend; returns the one actually in effect."""
    global _active, _IMPL
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; expected one of {_BACKENDS}")
    if name == "numpy":
        _IMPL = dict(_NUMPY_IMPL)
        _active = "numpy"
        return _active
    try:
        numba_impl = _build_numba_impl()
    except ImportError:
        _IMPL = dict(_NUMPY_IMPL)
        _active = "numpy"
        return _active
    if name == "numba":
        _IMPL = dict(numba_impl)
    else:
        _IMPL = dict(_NUMPY_IMPL)
        _IMPL.update({k: numba_impl[k] for k in _NUMBA_PREFERRED})
    _active = name
    return _active


def active_backend() -> str:
    return _active


def backend_impl(name: str, backend: str):
    """Fetch one kernel from an explicit backend (used by the benchmark)."""
    if backend == "numpy":
        return _NUMPY_IMPL[name]
    return _build_numba_impl()[name]


# 2D views with the last axis intact, so row kernels apply to any rank.

def _rows(x):
    return np.ascontiguousarray(x).reshape(-1, x.shape[-1])


def softmax_last(x):
    return _IMPL["softmax"](_rows(x)).reshape(x.shape)


def softmax_last_backward(dy, y):
    return _IMPL["softmax_backward"](_rows(dy), _rows(y)).reshape(dy.shape)


def layernorm_forward(x, gamma, beta, eps):
    y, mean, rstd = _IMPL["layernorm_forward"](_rows(x), gamma, beta, eps)
    return y.reshape(x.shape), mean, rstd


def layernorm_backward(dy, x, gamma, mean, rstd):
    dx, dgamma, dbeta = _IMPL["layernorm_backward"](_rows(dy), _rows(x), gamma, mean, rstd)
    return dx.reshape(x.shape), dgamma, dbeta


def gelu_forward(x):
    return _IMPL["gelu_forward"](np.ascontiguousarray(x))


def gelu_backward(dy, x):
    return _IMPL["gelu_backward"](np.ascontiguousarray(dy), np.ascontiguousarray(x))


def cross_entropy_forward(logits2d, targets, weights):
    return _IMPL["cross_entropy_forward"](np.ascontiguousarray(logits2d), targets, weights)


def cross_entropy_backward(probs, targets, weights, upstream):
    return _IMPL["cross_entropy_backward"](probs, targets, weights, upstream)


def bce_forward(logits2d, labels2d, weights):
    return _IMPL["bce_forward"](np.ascontiguousarray(logits2d), labels2d, weights)


def bce_backward(logits2d, labels2d, weights, upstream):
    return _IMPL["bce_backward"](np.ascontiguousarray(logits2d), labels2d, weights, upstream)


def adamw_step(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay):
    _IMPL["adamw_step"](p.ravel(), np.ascontiguousarray(g).ravel(), m, v,
                        step, lr, beta1, beta2, eps, weight_decay)


def embedding_grad(ids, dy2d, out):
    _IMPL["embedding_grad"](ids, np.ascontiguousarray(dy2d), out)


try:
    set_backend(os.environ.get("DSTLAB_KERNELS", "auto").lower())
except ValueError:
    set_backend("auto")

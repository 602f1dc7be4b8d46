"""Fused differentiable ops used by the model layers."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor, sqrt, sum_

LAYER_NORM_EPS = 1e-5
COSINE_EPS = 1e-8


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Max-shifted softmax along ``axis``.

    ``mask`` (broadcastable boolean, True = keep) sends dropped entries to
    probability 0.  A slice with every entry masked yields zeros.
    """
    x = as_tensor(x)
    xd = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), xd.shape)
        xd = np.where(mask, xd, -np.inf)
    shift = np.max(xd, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    e = np.exp(xd - shift)
    denom = e.sum(axis=axis, keepdims=True)
    out = e / np.where(denom > 0, denom, 1.0)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out.astype(x.dtype, copy=False), (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    shifted = xd - xd.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis, then apply ``gain * xhat + bias``."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data
    n = xd.shape[-1]
    lead = tuple(range(xd.ndim - 1))

    def backward(g):
        g_gain = (g * xhat).sum(axis=lead) if lead else g * xhat
        g_bias = g.sum(axis=lead) if lead else g
        gx_hat = g * gd
        gx = inv / n * (
            n * gx_hat
            - gx_hat.sum(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True)
        )
        return gx, g_gain.reshape(gain.shape), g_bias.reshape(bias.shape)

    return Tensor._make(out, (x, gain, bias), backward)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: identity in eval mode, kept units scaled by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must satisfy 0 <= p < 1, got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * keep


def cosine_similarity(a: Tensor, b: Tensor, eps: float = COSINE_EPS) -> Tensor:
    """Pairwise cosine similarity between rows: (..., S, E) x (..., C, E) -> (..., S, C).

    Norms are computed as sqrt(|v|^2 + eps^2) so zero vectors give 0, never NaN.
    """
    a, b = as_tensor(a), as_tensor(b)
    na = sqrt(sum_(a * a, axis=-1, keepdims=True) + eps * eps)
    nb = sqrt(sum_(b * b, axis=-1, keepdims=True) + eps * eps)
    return (a / na) @ (b / nb).swapaxes(-1, -2)

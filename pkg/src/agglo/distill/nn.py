"""Forward/backward pairs for the few layers the toy student needs.

Every ``*_fwd`` returns ``(output, cache)``; the matching ``*_bwd`` takes the
cache and the upstream gradient, adds parameter gradients into ``grads`` (a
name -> array dict) and returns the gradient w.r.t. the input. Layers act on
the last axis and accept any leading shape.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

LN_EPS = 1e-5
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _acc(grads: dict, name: str, g: np.ndarray) -> None:
    if name in grads:
        grads[name] += g
    else:
        grads[name] = g.copy()


def linear_fwd(params: dict, name: str, x: np.ndarray):
    y = x @ params[f"{name}.W"] + params[f"{name}.b"]
    return y, (name, x)


def linear_bwd(params: dict, cache, g: np.ndarray, grads: dict) -> np.ndarray:
    name, x = cache
    w = params[f"{name}.W"]
    x2 = x.reshape(-1, x.shape[-1])
    g2 = g.reshape(-1, g.shape[-1])
    _acc(grads, f"{name}.W", x2.T @ g2)
    _acc(grads, f"{name}.b", g2.sum(axis=0))
    return g @ w.T


def layernorm_fwd(params: dict, name: str, x: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    y = xhat * params[f"{name}.g"] + params[f"{name}.b"]
    return y, (name, xhat, inv)


def layernorm_bwd(params: dict, cache, g: np.ndarray, grads: dict) -> np.ndarray:
    name, xhat, inv = cache
    d = xhat.shape[-1]
    _acc(grads, f"{name}.g", (g * xhat).reshape(-1, d).sum(axis=0))
    _acc(grads, f"{name}.b", g.reshape(-1, d).sum(axis=0))
    gx = g * params[f"{name}.g"]
    return inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))


def gelu_fwd(x: np.ndarray):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return x * cdf, (x, cdf)


def gelu_bwd(cache, g: np.ndarray) -> np.ndarray:
    x, cdf = cache
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return g * (cdf + x * pdf)


def window_matrix(n: int, window: int) -> np.ndarray:
    """Row-normalized band matrix: mean over the valid neighbors within ``window``."""
    half = window // 2
    idx = np.arange(n)
    band = (np.abs(idx[:, None] - idx[None, :]) <= half).astype(np.float64)
    return band / band.sum(axis=1, keepdims=True)


def box_mix(x: np.ndarray, window: int) -> np.ndarray:
    """Zero-padded box average over an (H, W, D) grid, normalized by valid count."""
    ay = window_matrix(x.shape[0], window)
    ax = window_matrix(x.shape[1], window)
    return np.einsum("ai,ijd,bj->abd", ay, x, ax)


def box_mix_bwd(g: np.ndarray, window: int) -> np.ndarray:
    ay = window_matrix(g.shape[0], window)
    ax = window_matrix(g.shape[1], window)
    return np.einsum("ai,abd,bj->ijd", ay, g, ax)


def mse(y: np.ndarray, t: np.ndarray) -> tuple[float, np.ndarray]:
    diff = y - t
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def cosine_distance(z: np.ndarray, t: np.ndarray, eps: float = 1e-12) -> tuple[float, np.ndarray]:
    """1 - cos(z, t) and its gradient w.r.t. ``z``."""
    nz = max(float(np.linalg.norm(z)), eps)
    nt = max(float(np.linalg.norm(t)), eps)
    cos = float(z @ t) / (nz * nt)
    grad = -(t / (nz * nt) - cos * z / (nz * nz))
    return 1.0 - cos, grad

"""Pure-numpy kernels: the fallback backend and the numerical reference.

Conventions shared by both backends:
  x     [B, T, K]   frame features (float64, C-contiguous)
  mask  [B, T]      validity, values in {0.0, 1.0}
  xh    [B, T, H, K'] head-split features, masked frames already zeroed
  e, w  [B, Q, H, T] attention scores / weights
Masked frames must never contribute arithmetically: kernels either branch
on the mask or substitute constants, so perturbing a masked frame leaves
every output bit-identical. Callers guarantee >= 1 valid frame per row.
"""

from __future__ import annotations

import numpy as np


# ---------------------------------------------------------------------------
# static pooling


def masked_max_fwd(x, mask):
    neg = np.where(mask[:, :, None] == 1.0, x, -np.inf)
    arg = np.argmax(neg, axis=1).astype(np.int64)  # first max -> lowest index
    y = np.take_along_axis(neg, arg[:, None, :], axis=1)[:, 0, :]
    return y, arg


def masked_max_bwd(g, arg, n_frames):
    B, K = g.shape
    dx = np.zeros((B, n_frames, K))
    np.put_along_axis(dx, arg[:, None, :], g[:, None, :], axis=1)
    return dx


def masked_mean_fwd(x, mask):
    xz = np.where(mask[:, :, None] == 1.0, x, 0.0)
    return xz.sum(axis=1) / mask.sum(axis=1)[:, None]


def masked_mean_bwd(g, mask):
    n = mask.sum(axis=1)
    return (mask / n[:, None])[:, :, None] * g[:, None, :]


def masked_std_fwd(x, mask, mu):
    d = np.where(mask[:, :, None] == 1.0, x - mu[:, None, :], 0.0)
    rad = (d * d).sum(axis=1) / mask.sum(axis=1)[:, None]
    return np.sqrt(rad)


def masked_std_bwd(g, x, mask, mu, sigma):
    # d(sqrt(z))/dz guarded at z=1e-12 so constant rows keep finite adjoints
    d = np.where(mask[:, :, None] == 1.0, x - mu[:, None, :], 0.0)
    n = mask.sum(axis=1)[:, None]
    coef = g / (n * np.maximum(sigma, 1e-6))
    dx = d * coef[:, None, :]
    dmu = -d.sum(axis=1) * coef
    return dx, dmu


# ---------------------------------------------------------------------------
# attention scorers


def scores_linear_fwd(xh, w, b):
    return np.einsum("bthk,qhk->bqht", xh, w, optimize=True) + b[None, :, :, None]


def scores_linear_bwd(g, xh, w):
    dxh = np.einsum("bqht,qhk->bthk", g, w, optimize=True)
    dw = np.einsum("bqht,bthk->qhk", g, xh, optimize=True)
    db = g.sum(axis=(0, 3))
    return dxh, dw, db


def scores_hidden_fwd(xh, w1, b1):
    z = np.einsum("bthk,qhkp->bqhtp", xh, w1, optimize=True)
    return z + b1[None, :, :, None, :]


def scores_hidden_bwd(g, xh, w1):
    dxh = np.einsum("bqhtp,qhkp->bthk", g, w1, optimize=True)
    dw1 = np.einsum("bthk,bqhtp->qhkp", xh, g, optimize=True)
    db1 = g.sum(axis=(0, 3))
    return dxh, dw1, db1


def scores_out_fwd(a, w2, b2):
    return np.einsum("bqhtp,qhp->bqht", a, w2, optimize=True) + b2[None, :, :, None]


def scores_out_bwd(g, a, w2):
    da = np.einsum("bqht,qhp->bqhtp", g, w2, optimize=True)
    dw2 = np.einsum("bqht,bqhtp->qhp", g, a, optimize=True)
    db2 = g.sum(axis=(0, 3))
    return da, dw2, db2


# ---------------------------------------------------------------------------
# masked softmax over the frame axis


def masked_softmax_fwd(e, mask):
    valid = mask[:, None, None, :] == 1.0
    neg = np.where(valid, e, -np.inf)
    m = neg.max(axis=3, keepdims=True)
    ex = np.exp(neg - m)
    w = ex / ex.sum(axis=3, keepdims=True)
    return np.where(valid, w, 0.0)  # masked slots exactly 0


def masked_softmax_bwd(g, w):
    dot = (g * w).sum(axis=3, keepdims=True)
    return w * (g - dot)


# ---------------------------------------------------------------------------
# attention-weighted statistics


def weighted_mean_fwd(w, xh):
    return np.einsum("bqht,bthk->bqhk", w, xh, optimize=True)


def weighted_mean_bwd(g, w, xh):
    dw = np.einsum("bqhk,bthk->bqht", g, xh, optimize=True)
    dxh = np.einsum("bqhk,bqht->bthk", g, w, optimize=True)
    return dw, dxh


def weighted_sqmean_fwd(w, xh):
    return np.einsum("bqht,bthk->bqhk", w, xh * xh, optimize=True)


def weighted_sqmean_bwd(g, w, xh):
    dw = np.einsum("bqhk,bthk->bqht", g, xh * xh, optimize=True)
    dxh = 2.0 * xh * np.einsum("bqhk,bqht->bthk", g, w, optimize=True)
    return dw, dxh


# ---------------------------------------------------------------------------
# optimizer


def adamw_update(p, g, m, v, step, lr, beta1, beta2, eps, wd):
    """One decoupled-weight-decay Adam step, in place on flat arrays."""
    p *= 1.0 - lr * wd
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)

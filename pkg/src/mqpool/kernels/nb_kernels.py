"""Numba-compiled kernels: same contracts as np_kernels, fused loops.

Loops branch on the mask instead of multiplying by it, so masked frames
never enter the arithmetic and mask invariance is bit-exact. Reductions
run in a fixed sequential order, which keeps every kernel deterministic
(results may differ from the numpy backend in the last ulp because numpy
reduces pairwise).
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def masked_max_fwd(x, mask):
    B, T, K = x.shape
    y = np.empty((B, K))
    arg = np.empty((B, K), np.int64)
    for b in range(B):
        for k in range(K):
            best = -np.inf
            best_t = -1
            for t in range(T):
                if mask[b, t] == 1.0 and x[b, t, k] > best:
                    best = x[b, t, k]
                    best_t = t
            y[b, k] = best
            arg[b, k] = best_t
    return y, arg


@njit(cache=True)
def masked_max_bwd(g, arg, n_frames):
    B, K = g.shape
    dx = np.zeros((B, n_frames, K))
    for b in range(B):
        for k in range(K):
            dx[b, arg[b, k], k] = g[b, k]
    return dx


@njit(cache=True)
def masked_mean_fwd(x, mask):
    B, T, K = x.shape
    y = np.zeros((B, K))
    for b in range(B):
        n = 0.0
        for t in range(T):
            if mask[b, t] == 1.0:
                n += 1.0
                for k in range(K):
                    y[b, k] += x[b, t, k]
        for k in range(K):
            y[b, k] /= n
    return y


@njit(cache=True)
def masked_mean_bwd(g, mask):
    B, T = mask.shape
    K = g.shape[1]
    dx = np.zeros((B, T, K))
    for b in range(B):
        n = 0.0
        for t in range(T):
            n += mask[b, t]
        for t in range(T):
            if mask[b, t] == 1.0:
                for k in range(K):
                    dx[b, t, k] = g[b, k] / n
    return dx


@njit(cache=True)
def masked_std_fwd(x, mask, mu):
    B, T, K = x.shape
    rad = np.zeros((B, K))
    for b in range(B):
        n = 0.0
        for t in range(T):
            if mask[b, t] == 1.0:
                n += 1.0
                for k in range(K):
                    d = x[b, t, k] - mu[b, k]
                    rad[b, k] += d * d
        for k in range(K):
            rad[b, k] = np.sqrt(rad[b, k] / n)
    return rad


@njit(cache=True)
def masked_std_bwd(g, x, mask, mu, sigma):
    B, T, K = x.shape
    dx = np.zeros((B, T, K))
    dmu = np.zeros((B, K))
    for b in range(B):
        n = 0.0
        for t in range(T):
            n += mask[b, t]
        for k in range(K):
            den = sigma[b, k]
            if den < 1e-6:
                den = 1e-6
            coef = g[b, k] / (n * den)
            acc = 0.0
            for t in range(T):
                if mask[b, t] == 1.0:
                    d = x[b, t, k] - mu[b, k]
                    dx[b, t, k] = d * coef
                    acc += d
            dmu[b, k] = -acc * coef
    return dx, dmu


@njit(cache=True)
def scores_linear_fwd(xh, w, b):
    B, T, H, Kp = xh.shape
    Q = w.shape[0]
    e = np.empty((B, Q, H, T))
    for bb in range(B):
        for q in range(Q):
            for h in range(H):
                for t in range(T):
                    acc = b[q, h]
                    for k in range(Kp):
                        acc += xh[bb, t, h, k] * w[q, h, k]
                    e[bb, q, h, t] = acc
    return e


@njit(cache=True)
def scores_linear_bwd(g, xh, w):
    B, T, H, Kp = xh.shape
    Q = w.shape[0]
    dxh = np.zeros((B, T, H, Kp))
    dw = np.zeros((Q, H, Kp))
    db = np.zeros((Q, H))
    for bb in range(B):
        for q in range(Q):
            for h in range(H):
                for t in range(T):
                    gg = g[bb, q, h, t]
                    db[q, h] += gg
                    for k in range(Kp):
                        dxh[bb, t, h, k] += gg * w[q, h, k]
                        dw[q, h, k] += gg * xh[bb, t, h, k]
    return dxh, dw, db


@njit(cache=True)
def scores_hidden_fwd(xh, w1, b1):
    B, T, H, Kp = xh.shape
    Q, _, _, P = w1.shape
    z = np.empty((B, Q, H, T, P))
    for bb in range(B):
        for q in range(Q):
            for h in range(H):
                for t in range(T):
                    for p in range(P):
                        acc = b1[q, h, p]
                        for k in range(Kp):
                            acc += xh[bb, t, h, k] * w1[q, h, k, p]
                        z[bb, q, h, t, p] = acc
    return z


@njit(cache=True)
def scores_hidden_bwd(g, xh, w1):
    B, T, H, Kp = xh.shape
    Q, _, _, P = w1.shape
    dxh = np.zeros((B, T, H, Kp))
    dw1 = np.zeros((Q, H, Kp, P))
    db1 = np.zeros((Q, H, P))
    for bb in range(B):
        for q in range(Q):
            for h in range(H):
                for t in range(T):
                    for p in range(P):
                        gg = g[bb, q, h, t, p]
                        db1[q, h, p] += gg
                        for k in range(Kp):
                            dxh[bb, t, h, k] += gg * w1[q, h, k, p]
                            dw1[q, h, k, p] += gg * xh[bb, t, h, k]
    return dxh, dw1, db1


@njit(cache=True)
def scores_out_fwd(a, w2, b2):
    B, Q, H, T, P = a.shape
    e = np.empty((B, Q, H, T))
    for bb in range(B):
        for q in range(Q):
            for h in range(H):
                for t in range(T):
                    acc = b2[q, h]
                    for p in range(P):
                        acc += a[bb, q, h, t, p] * w2[q, h, p]
                    e[bb, q, h, t] = acc
    return e


@njit(cache=True)
def scores_out_bwd(g, a, w2):
    B, Q, H, T, P = a.shape
    da = np.zeros((B, Q, H, T, P))
    dw2 = np.zeros((Q, H, P))
    db2 = np.zeros((Q, H))
    for bb in range(B):
        for q in range(Q):
            for h in range(H):
                for t in range(T):
                    gg = g[bb, q, h, t]
                    db2[q, h] += gg
                    for p in range(P):
                        da[bb, q, h, t, p] = gg * w2[q, h, p]
                        dw2[q, h, p] += gg * a[bb, q, h, t, p]
    return da, dw2, db2


@njit(cache=True)
def masked_softmax_fwd(e, mask):
    B, Q, H, T = e.shape
    w = np.zeros((B, Q, H, T))
    for b in range(B):
        for q in range(Q):
            for h in range(H):
                hi = -np.inf
                for t in range(T):
                    if mask[b, t] == 1.0 and e[b, q, h, t] > hi:
                        hi = e[b, q, h, t]
                s = 0.0
                for t in range(T):
                    if mask[b, t] == 1.0:
                        ex = np.exp(e[b, q, h, t] - hi)
                        w[b, q, h, t] = ex
                        s += ex
                for t in range(T):
                    if mask[b, t] == 1.0:
                        w[b, q, h, t] /= s
    return w


@njit(cache=True)
def masked_softmax_bwd(g, w):
    B, Q, H, T = w.shape
    de = np.zeros((B, Q, H, T))
    for b in range(B):
        for q in range(Q):
            for h in range(H):
                dot = 0.0
                for t in range(T):
                    dot += g[b, q, h, t] * w[b, q, h, t]
                for t in range(T):
                    de[b, q, h, t] = w[b, q, h, t] * (g[b, q, h, t] - dot)
    return de


@njit(cache=True)
def weighted_mean_fwd(w, xh):
    B, Q, H, T = w.shape
    Kp = xh.shape[3]
    mu = np.zeros((B, Q, H, Kp))
    for b in range(B):
        for q in range(Q):
            for h in range(H):
                for t in range(T):
                    wt = w[b, q, h, t]
                    if wt != 0.0:
                        for k in range(Kp):
                            mu[b, q, h, k] += wt * xh[b, t, h, k]
    return mu


@njit(cache=True)
def weighted_mean_bwd(g, w, xh):
    B, Q, H, T = w.shape
    Kp = xh.shape[3]
    dw = np.zeros((B, Q, H, T))
    dxh = np.zeros((B, T, H, Kp))
    for b in range(B):
        for q in range(Q):
            for h in range(H):
                for t in range(T):
                    acc = 0.0
                    wt = w[b, q, h, t]
                    for k in range(Kp):
                        acc += g[b, q, h, k] * xh[b, t, h, k]
                        dxh[b, t, h, k] += g[b, q, h, k] * wt
                    dw[b, q, h, t] = acc
    return dw, dxh


@njit(cache=True)
def weighted_sqmean_fwd(w, xh):
    B, Q, H, T = w.shape
    Kp = xh.shape[3]
    s2 = np.zeros((B, Q, H, Kp))
    for b in range(B):
        for q in range(Q):
            for h in range(H):
                for t in range(T):
                    wt = w[b, q, h, t]
                    if wt != 0.0:
                        for k in range(Kp):
                            xv = xh[b, t, h, k]
                            s2[b, q, h, k] += wt * xv * xv
    return s2


@njit(cache=True)
def weighted_sqmean_bwd(g, w, xh):
    B, Q, H, T = w.shape
    Kp = xh.shape[3]
    dw = np.zeros((B, Q, H, T))
    dxh = np.zeros((B, T, H, Kp))
    for b in range(B):
        for q in range(Q):
            for h in range(H):
                for t in range(T):
                    acc = 0.0
                    wt = w[b, q, h, t]
                    for k in range(Kp):
                        xv = xh[b, t, h, k]
                        acc += g[b, q, h, k] * xv * xv
                        dxh[b, t, h, k] += 2.0 * g[b, q, h, k] * wt * xv
                    dw[b, q, h, t] = acc
    return dw, dxh


@njit(cache=True)
def adamw_update(p, g, m, v, step, lr, beta1, beta2, eps, wd):
    n = p.size
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    decay = 1.0 - lr * wd
    for i in range(n):
        p[i] *= decay
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        p[i] -= lr * (m[i] / bc1) / (np.sqrt(v[i] / bc2) + eps)

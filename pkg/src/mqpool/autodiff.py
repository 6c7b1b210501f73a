"""Reverse-mode gradients for the operator set this package composes.

Not a general autodiff engine: the tape records only the primitives the
pooling operators, the toy model, and the focal loss are built from. Each
primitive saves exactly the intermediates its adjoint needs; heavy forward
and backward passes go through the active kernel backend.

A tape is single-owner while recording and replaying. Recording happens
only when some input requires a gradient, so running a composition on
constants is a plain forward pass.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .kernels import impl as K


class Var:
    """A value tracked on a tape, with its accumulated adjoint."""

    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value, requires_grad: bool):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape


class _Node:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output, inputs, backward):
        self.output = output
        self.inputs = inputs
        self.backward = backward


class GradientTape:
    """Ordered record of primitive applications, replayed in reverse."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.leaves: dict[str, Var] = {}

    def leaf(self, value, name: str | None = None) -> Var:
        v = Var(value, requires_grad=True)
        if name is not None:
            self.leaves[name] = v
        return v

    def constant(self, value) -> Var:
        return Var(value, requires_grad=False)

    def _record(self, value, inputs, backward) -> Var:
        track = any(i.requires_grad for i in inputs)
        out = Var(value, requires_grad=track)
        if track:
            self.nodes.append(_Node(out, inputs, backward))
        return out

    # -- elementwise / structural ------------------------------------------

    def affine(self, x: Var, w: Var, b: Var) -> Var:
        """x @ w + b for x of shape [..., I]."""
        xv, wv, bv = x.value, w.value, b.value
        y = xv @ wv + bv

        def bwd(g):
            gr = g.reshape(-1, wv.shape[1])
            xr = xv.reshape(-1, wv.shape[0])
            dx = (gr @ wv.T).reshape(xv.shape)
            return dx, xr.T @ gr, gr.sum(axis=0)

        return self._record(y, (x, w, b), bwd)

    def tanh(self, x: Var) -> Var:
        y = np.tanh(x.value)
        return self._record(y, (x,), lambda g: (g * (1.0 - y * y),))

    def relu(self, x: Var) -> Var:
        y = np.maximum(x.value, 0.0)
        return self._record(y, (x,), lambda g: (g * (y > 0.0),))

    def mask_features(self, x: Var, mask: np.ndarray) -> Var:
        """Zero features on masked frames so they never reach a reduction."""
        keep = mask[:, :, None] == 1.0
        y = np.where(keep, x.value, 0.0)
        return self._record(y, (x,), lambda g: (np.where(keep, g, 0.0),))

    def split_heads(self, x: Var, n_heads: int) -> Var:
        """[B,T,K] -> [B,T,H,K/H]; heads are contiguous feature blocks."""
        B, T, Kf = x.value.shape
        y = x.value.reshape(B, T, n_heads, Kf // n_heads)
        return self._record(y, (x,), lambda g: (g.reshape(B, T, Kf),))

    def concat(self, parts: list[Var], axis: int = -1) -> Var:
        values = [p.value for p in parts]
        y = np.concatenate(values, axis=axis)
        sizes = [v.shape[axis] for v in values]
        offsets = np.cumsum(sizes)[:-1]

        def bwd(g):
            return tuple(np.ascontiguousarray(s) for s in np.split(g, offsets, axis=axis))

        return self._record(y, tuple(parts), bwd)

    def mul_const(self, x: Var, c) -> Var:
        c = np.asarray(c, dtype=np.float64)
        return self._record(x.value * c, (x,), lambda g: (g * c,))

    def reduce_sum(self, x: Var) -> Var:
        shape = x.value.shape
        return self._record(x.value.sum(), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))

    # -- static pooling ----------------------------------------------------

    def masked_max_pool(self, x: Var, mask: np.ndarray) -> Var:
        y, arg = K.masked_max_fwd(x.value, mask)
        n_frames = x.value.shape[1]
        return self._record(y, (x,), lambda g: (K.masked_max_bwd(g, arg, n_frames),))

    def masked_mean_pool(self, x: Var, mask: np.ndarray) -> Var:
        y = K.masked_mean_fwd(x.value, mask)
        return self._record(y, (x,), lambda g: (K.masked_mean_bwd(g, mask),))

    def masked_std_pool(self, x: Var, mu: Var, mask: np.ndarray) -> Var:
        sigma = K.masked_std_fwd(x.value, mask, mu.value)
        xv, muv = x.value, mu.value
        return self._record(
            sigma, (x, mu), lambda g: K.masked_std_bwd(g, xv, mask, muv, sigma)
        )

    # -- attentive pooling ---------------------------------------------------

    def scores_linear(self, xh: Var, w: Var, b: Var) -> Var:
        e = K.scores_linear_fwd(xh.value, w.value, b.value)
        xv, wv = xh.value, w.value
        return self._record(e, (xh, w, b), lambda g: K.scores_linear_bwd(g, xv, wv))

    def scores_hidden(self, xh: Var, w1: Var, b1: Var) -> Var:
        z = K.scores_hidden_fwd(xh.value, w1.value, b1.value)
        xv, wv = xh.value, w1.value
        return self._record(z, (xh, w1, b1), lambda g: K.scores_hidden_bwd(g, xv, wv))

    def scores_out(self, a: Var, w2: Var, b2: Var) -> Var:
        e = K.scores_out_fwd(a.value, w2.value, b2.value)
        av, wv = a.value, w2.value
        return self._record(e, (a, w2, b2), lambda g: K.scores_out_bwd(g, av, wv))

    def masked_softmax(self, e: Var, mask: np.ndarray) -> Var:
        w = K.masked_softmax_fwd(e.value, mask)
        return self._record(w, (e,), lambda g: (K.masked_softmax_bwd(g, w),))

    def weighted_mean(self, w: Var, xh: Var) -> Var:
        mu = K.weighted_mean_fwd(w.value, xh.value)
        wv, xv = w.value, xh.value
        return self._record(mu, (w, xh), lambda g: K.weighted_mean_bwd(g, wv, xv))

    def weighted_sqmean(self, w: Var, xh: Var) -> Var:
        s2 = K.weighted_sqmean_fwd(w.value, xh.value)
        wv, xv = w.value, xh.value
        return self._record(s2, (w, xh), lambda g: K.weighted_sqmean_bwd(g, wv, xv))

    def stats_sigma(self, s2: Var, mu: Var) -> Var:
        """sigma = sqrt(max(s2 - mu^2, 0)) with a guarded sqrt adjoint."""
        muv = mu.value
        rad = s2.value - muv * muv
        radc = np.maximum(rad, 0.0)
        sigma = np.sqrt(radc)

        def bwd(g):
            dsig = np.where(rad > 0.0, 0.5 / np.sqrt(np.maximum(radc, 1e-12)), 0.0)
            gs = g * dsig
            return gs, gs * (-2.0 * muv)

        return self._record(sigma, (s2, mu), bwd)

    def stats_concat(self, mu: Var, sigma: Var) -> Var:
        """[B,Q,H,K'] pairs -> [B, 2QK]: q-major, then head, then [mu, sigma]."""
        B, Q, H, Kp = mu.value.shape
        y = np.stack([mu.value, sigma.value], axis=3).reshape(B, 2 * Q * H * Kp)

        def bwd(g):
            gr = g.reshape(B, Q, H, 2, Kp)
            return np.ascontiguousarray(gr[:, :, :, 0, :]), np.ascontiguousarray(gr[:, :, :, 1, :])

        return self._record(y, (mu, sigma), bwd)

    # -- loss ----------------------------------------------------------------

    def focal_loss(self, logits: Var, labels: np.ndarray, alpha: np.ndarray, gamma: float) -> Var:
        """Mean over the batch of -alpha_c (1-p_c)^gamma log(p_c)."""
        z = logits.value
        B = z.shape[0]
        rows = np.arange(B)
        zs = z - z.max(axis=1, keepdims=True)
        ez = np.exp(zs)
        s = ez / ez.sum(axis=1, keepdims=True)
        p = s[rows, labels]
        a = alpha[labels]
        psafe = np.maximum(p, 1e-12)
        onemp = 1.0 - p
        value = np.mean(-a * onemp**gamma * np.log(psafe))

        def bwd(g):
            if gamma == 0.0:
                dLdp = -a / psafe
            else:
                safe = np.where(onemp > 0.0, onemp, 1.0)
                term1 = np.where(
                    onemp > 0.0, gamma * safe ** (gamma - 1.0) * np.log(psafe), 0.0
                )
                dLdp = a * (term1 - onemp**gamma / psafe)
            coef = dLdp * p
            dz = -coef[:, None] * s
            dz[rows, labels] += coef
            return (float(g) * dz / B,)

        return self._record(np.asarray(value), (logits,), bwd)


def backward(tape: GradientTape, loss_adjoint: float = 1.0) -> dict[str, np.ndarray]:
    """Replay the tape in reverse; returns adjoints for all named leaves.

    The tape must have recorded a computation ending in a scalar. Each
    recorded op is visited exactly once.
    """
    if not tape.nodes:
        raise ContractError("tape recorded no differentiable computation")
    root = tape.nodes[-1].output
    if root.value.shape != ():
        raise ContractError(f"tape root has shape {root.value.shape}, expected scalar")
    root.grad = np.asarray(float(loss_adjoint))
    for node in reversed(tape.nodes):
        g = node.output.grad
        if g is None:
            continue
        grads = node.backward(g)
        for var, dg in zip(node.inputs, grads):
            if dg is None or not var.requires_grad:
                continue
            var.grad = dg if var.grad is None else var.grad + dg
    return {
        name: (v.grad if v.grad is not None else np.zeros_like(v.value))
        for name, v in tape.leaves.items()
    }

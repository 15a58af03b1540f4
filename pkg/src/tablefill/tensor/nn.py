"""Composite layers built on the engine: initialisers, a fused LSTM, attention."""
from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from .engine import (
    ShapeError,
    Tensor,
    _make,
    linear,
    mask_rows,
    matmul,
    reshape,
    scale,
    softmax_last,
    transpose,
)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None, name=None) -> Tensor:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    shape = (fan_in, fan_out) if shape is None else shape
    return Tensor(rng.uniform(-a, a, size=shape), requires_grad=True, name=name)


def zeros(shape, name=None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def ones(shape, name=None) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True, name=name)


def _sig(z):
    return 1.0 / (1.0 + np.exp(-z))


def lstm(x: Tensor, mask: np.ndarray, wx: Tensor, wh: Tensor, b: Tensor,
         reverse: bool = False) -> Tensor:
    """Run a single-direction LSTM over ``x`` of shape ``[B, n, d_in]``.

    Gates are packed ``[input, forget, cell, output]`` along the last axis of
    ``wx`` (``[d_in, 4h]``), ``wh`` (``[h, 4h]``) and ``b`` (``[4h]``).  At
    positions where ``mask`` is False the state is carried through unchanged
    and the output is zero, so trailing padding never reaches real tokens in
    either direction.  The backward pass is hand-written BPTT.
    """
    bsz, n, d_in = x.shape
    h = wh.shape[0]
    if wx.shape != (d_in, 4 * h) or wh.shape != (h, 4 * h) or b.shape != (4 * h,):
        raise ShapeError(f"lstm: weights {wx.shape}/{wh.shape}/{b.shape} vs input {x.shape}")
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (bsz, n):
        raise ShapeError(f"lstm: mask {mask.shape} vs input {x.shape}")

    steps = range(n - 1, -1, -1) if reverse else range(n)
    xw = x.data @ wx.data + b.data
    gates = np.empty((n, bsz, 4 * h))
    c_new_all = np.empty((n, bsz, h))
    h_prev_all = np.empty((n, bsz, h))
    c_prev_all = np.empty((n, bsz, h))
    out = np.zeros((bsz, n, h))
    hs = np.zeros((bsz, h))
    cs = np.zeros((bsz, h))
    for t in steps:
        z = xw[:, t] + hs @ wh.data
        ig, fg, gg, og = _sig(z[:, :h]), _sig(z[:, h:2 * h]), np.tanh(z[:, 2 * h:3 * h]), _sig(z[:, 3 * h:])
        c_new = fg * cs + ig * gg
        h_new = og * np.tanh(c_new)
        gates[t] = np.concatenate([ig, fg, gg, og], axis=1)
        c_new_all[t], h_prev_all[t], c_prev_all[t] = c_new, hs, cs
        m = mask[:, t, None]
        out[:, t] = m * h_new
        hs = m * h_new + (1 - m) * hs
        cs = m * c_new + (1 - m) * cs

    def backward(g):
        dxw = np.zeros_like(xw)
        dwh = np.zeros_like(wh.data)
        dh = np.zeros((bsz, h))
        dc = np.zeros((bsz, h))
        for t in reversed(list(steps)):
            m = mask[:, t, None]
            ig, fg, gg, og = (gates[t][:, k * h:(k + 1) * h] for k in range(4))
            tc = np.tanh(c_new_all[t])
            dh_new = m * (g[:, t] + dh)
            dc_new = m * dc + dh_new * og * (1 - tc * tc)
            dz = np.concatenate([
                dc_new * gg * ig * (1 - ig),
                dc_new * c_prev_all[t] * fg * (1 - fg),
                dc_new * ig * (1 - gg * gg),
                dh_new * tc * og * (1 - og),
            ], axis=1)
            dxw[:, t] = dz
            dwh += h_prev_all[t].T @ dz
            dh = (1 - m) * dh + dz @ wh.data.T
            dc = (1 - m) * dc + dc_new * fg
        if x.requires_grad:
            x.grad += dxw @ wx.data.T
        flat = dxw.reshape(-1, 4 * h)
        if wx.requires_grad:
            wx.grad += x.data.reshape(-1, d_in).T @ flat
        if wh.requires_grad:
            wh.grad += dwh
        if b.requires_grad:
            b.grad += flat.sum(axis=0)

    return _make(out, (x, wx, wh, b), "lstm_reverse" if reverse else "lstm", backward)


ATTENTION_KEYS = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")


def init_attention(d: int, rng: np.random.Generator) -> dict[str, Tensor]:
    """Q/K/V/output projection weights for a ``d``-wide attention layer."""
    params = {}
    for p in "qkvo":
        params[f"w{p}"] = glorot(rng, d, d)
        params[f"b{p}"] = zeros((d,))
    return params


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, params: Mapping[str, Tensor],
                         heads: int, key_mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention with learned projections.

    ``q`` is ``[B, n_q, d]``, ``k`` and ``v`` are ``[B, n_k, d]``;
    ``key_mask`` (``[B, n_k]``, True = real) removes padded keys.  Query rows
    left with no eligible key output zeros.  Self-attention is ``q is k is v``.
    """
    if q.ndim == 2:
        out = multi_head_attention(reshape(q, (1,) + q.shape), reshape(k, (1,) + k.shape),
                                   reshape(v, (1,) + v.shape), params, heads,
                                   None if key_mask is None else np.asarray(key_mask)[None])
        return reshape(out, out.shape[1:])
    bsz, nq, d = q.shape
    nk = k.shape[1]
    if d % heads:
        raise ValueError(f"model width {d} is not divisible by {heads} heads")
    if k.shape != (bsz, nk, d) or v.shape != (bsz, nk, d):
        raise ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape}")
    dk = d // heads

    qh = transpose(reshape(linear(q, params["wq"], params["bq"]), (bsz, nq, heads, dk)), (0, 2, 1, 3))
    kh = transpose(reshape(linear(k, params["wk"], params["bk"]), (bsz, nk, heads, dk)), (0, 2, 3, 1))
    vh = transpose(reshape(linear(v, params["wv"], params["bv"]), (bsz, nk, heads, dk)), (0, 2, 1, 3))
    scores = scale(matmul(qh, kh), 1.0 / math.sqrt(dk))
    mask = None
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=bool)
        if key_mask.shape != (bsz, nk):
            raise ShapeError(f"attention: key mask {key_mask.shape} vs keys {k.shape}")
        mask = np.broadcast_to(key_mask[:, None, None, :], scores.shape)
    att = softmax_last(scores, mask)
    ctx = reshape(transpose(matmul(att, vh), (0, 2, 1, 3)), (bsz, nq, d))
    out = linear(ctx, params["wo"], params["bo"])
    if key_mask is not None and not key_mask.any(axis=1).all():
        keep = np.broadcast_to(key_mask.any(axis=1)[:, None], (bsz, nq))
        out = mask_rows(out, keep)
    return out


__all__ = ["glorot", "zeros", "ones", "lstm", "ATTENTION_KEYS", "init_attention", "multi_head_attention"]

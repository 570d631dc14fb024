"""Building blocks: LSTM, dense layer, intersection convolution and
scaled dot-product self-attention.

Parameters live in plain ``dict[str, Tensor]`` maps. Weight matrices are
stored ``(out, in)`` and applied to row vectors, so a batch of inputs of
shape ``(B, in)`` maps to ``(B, out)``.
"""

from __future__ import annotations

import math

import numpy as np

from . import gradcore as G
from .errors import RowsNotDivisible, ShapeMismatch
from .gradcore import Tensor

GATES = ("f", "i", "o", "c")


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    s = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-s, s, size=shape), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def init_dense(rng, in_dim: int, out_dim: int) -> dict[str, Tensor]:
    return {"W": uniform_init(rng, (out_dim, in_dim), in_dim), "b": zeros(out_dim)}


def dense(x: Tensor, p: dict[str, Tensor]) -> Tensor:
    if x.shape[-1] != p["W"].shape[1]:
        raise ShapeMismatch(f"dense layer expects {p['W'].shape[1]} inputs, got {x.shape}")
    return G.add(G.matmul(x, G.transpose(p["W"])), p["b"])


def init_lstm(rng, in_dim: int, hidden: int, layers: int) -> list[dict[str, Tensor]]:
    """One dict per layer with ``W_f, b_f, ..., W_c, b_c``; every ``W`` is
    ``(hidden, in + hidden)`` and acts on ``[x_t; hs_prev]``."""
    out = []
    for layer in range(layers):
        width = (in_dim if layer == 0 else hidden) + hidden
        p = {}
        for g in GATES:
            p[f"W_{g}"] = uniform_init(rng, (hidden, width), width)
            p[f"b_{g}"] = zeros(hidden)
        out.append(p)
    return out


def _check_cell(x: Tensor, hs: Tensor, cs: Tensor, p):
    hidden, width = p["W_f"].shape
    if x.shape[-1] + hs.shape[-1] != width or hs.shape != cs.shape or hs.shape[-1] != hidden:
        raise ShapeMismatch(f"LSTM cell: x {x.shape}, hs {hs.shape}, cs {cs.shape}, W {p['W_f'].shape}")


def lstm_cell(x: Tensor, hs_prev: Tensor, cs_prev: Tensor, p: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    _check_cell(x, hs_prev, cs_prev, p)
    z = G.concat([x, hs_prev], axis=-1)
    g_f = G.sigmoid(dense(z, {"W": p["W_f"], "b": p["b_f"]}))
    g_i = G.sigmoid(dense(z, {"W": p["W_i"], "b": p["b_i"]}))
    g_o = G.sigmoid(dense(z, {"W": p["W_o"], "b": p["b_o"]}))
    cand = G.tanh(dense(z, {"W": p["W_c"], "b": p["b_c"]}))
    cs = G.add(G.mul(g_f, cs_prev), G.mul(g_i, cand))
    hs = G.mul(g_o, G.tanh(cs))
    return hs, cs


def _fused(p):
    # Stack the four gates into one (in + hidden, 4 * hidden) map so each
    # step costs a single matmul; gradients still reach the separate tensors.
    W = G.transpose(G.concat([p[f"W_{g}"] for g in GATES], axis=0))
    b = G.concat([p[f"b_{g}"] for g in GATES], axis=0)
    return W, b


def lstm_forward(seq: list[Tensor], params: list[dict[str, Tensor]]) -> list[Tensor]:
    """Unroll a stacked LSTM from zero states; returns the top layer's hidden
    state at every step. Each element of ``seq`` is ``(B, in)`` or ``(in,)``."""
    if not seq or not params:
        raise ShapeMismatch("LSTM needs at least one step and one layer")
    inputs = seq
    for p in params:
        hidden = p["W_f"].shape[0]
        lead = inputs[0].shape[:-1]
        hs = Tensor(np.zeros(lead + (hidden,)))
        cs = Tensor(np.zeros(lead + (hidden,)))
        W, b = _fused(p)
        outputs = []
        for x in inputs:
            _check_cell(x, hs, cs, p)
            pre = G.add(G.matmul(_rows(G.concat([x, hs], axis=-1)), W), b)
            g_f = G.sigmoid(_cols(pre, 0, hidden, lead))
            g_i = G.sigmoid(_cols(pre, 1, hidden, lead))
            g_o = G.sigmoid(_cols(pre, 2, hidden, lead))
            cand = G.tanh(_cols(pre, 3, hidden, lead))
            cs = G.add(G.mul(g_f, cs), G.mul(g_i, cand))
            hs = G.mul(g_o, G.tanh(cs))
            outputs.append(hs)
        inputs = outputs
    return inputs


def _rows(z: Tensor) -> Tensor:
    return z if z.data.ndim >= 2 else G.reshape(z, (1, -1))


def _cols(pre: Tensor, k: int, hidden: int, lead) -> Tensor:
    part = G.take(pre, (Ellipsis, slice(k * hidden, (k + 1) * hidden)))
    return part if lead else G.reshape(part, (hidden,))


def init_conv(rng, k: int, channels: int) -> dict[str, Tensor]:
    return {"W": uniform_init(rng, (channels, k, 1), k), "b": zeros(channels)}


def intersection_conv(M: Tensor, p: dict[str, Tensor]) -> Tensor:
    """Per-channel ``sigmoid(W * M + b)`` with a ``k x 1`` kernel and stride
    ``[k, 1]``: each block of ``k`` rows (one intersection) collapses to one
    row and the time axis is untouched. ``(B, k^d, h) -> (B, c, k^(d-1), h)``."""
    k = p["W"].shape[1]
    if M.shape[-2] % k:
        raise RowsNotDivisible(f"{M.shape[-2]} rows are not divisible by k={k}")
    return G.sigmoid(G.conv2d(M, p["W"], p["b"], stride=(k, 1)))


def to_feature_sequence(conv_out: Tensor) -> list[Tensor]:
    """Column ``t`` of every channel and row, flattened channel-major, as the
    feature vector of step ``t``."""
    *lead, c, rows, h = conv_out.shape
    flat = G.reshape(conv_out, tuple(lead) + (c * rows, h))
    return [G.take(flat, (Ellipsis, slice(None), t)) for t in range(h)]


def init_attention(rng, d_hid: int) -> dict[str, Tensor]:
    # No key bias: it shifts every score in a row by the same amount, which
    # softmax ignores, so it would be a parameter with identically zero gradient.
    return {
        "W_q": uniform_init(rng, (d_hid, d_hid), d_hid),
        "b_q": zeros(d_hid),
        "W_k": uniform_init(rng, (d_hid, d_hid), d_hid),
        "W_v": uniform_init(rng, (d_hid, d_hid), d_hid),
        "b_v": zeros(d_hid),
    }


def self_attention(stack: Tensor, p: dict[str, Tensor], return_weights: bool = False):
    """``softmax(Q K^T / sqrt(d_hid)) V`` over the rows of ``stack`` (``(n, d)``
    or ``(B, n, d)``)."""
    d_hid = p["W_q"].shape[0]
    if stack.shape[-1] != d_hid or stack.data.ndim not in (2, 3) or stack.shape[-2] < 1:
        raise ShapeMismatch(f"attention over {stack.shape} with d_hid={d_hid}")
    Q = dense(stack, {"W": p["W_q"], "b": p["b_q"]})
    K = G.matmul(stack, G.transpose(p["W_k"]))
    V = dense(stack, {"W": p["W_v"], "b": p["b_v"]})
    scores = G.scale(G.matmul(Q, G.transpose(K)), 1.0 / math.sqrt(d_hid))
    weights = G.softmax(scores, axis=-1)
    out = G.matmul(weights, V)
    return (out, weights) if return_weights else out

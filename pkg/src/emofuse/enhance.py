"""Per-modality dynamic enhancement block.

Projects raw modality features to the shared hidden width, then applies a
sigmoid feature gate, multi-head self-attention with a residual LayerNorm,
and a residual feedforward sub-block. Reduced variants keep only a subset of
those stages (used by the A-series ablations).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

VARIANTS = ("full", "removed", "gating_only", "attention_only")


def glorot(rng, fan_in, fan_out, shape=None):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return ad.Tensor(rng.uniform(-limit, limit, size=shape or (fan_in, fan_out)),
                     requires_grad=True)


def zeros_param(shape):
    return ad.Tensor(np.zeros(shape), requires_grad=True)


def ones_param(shape):
    return ad.Tensor(np.ones(shape), requires_grad=True)


@dataclass
class EnhancerParams:
    variant: str
    d: int
    heads: int
    w_in: ad.Tensor
    gate_w: ad.Tensor = None
    gate_b: ad.Tensor = None
    head_qkv: list = field(default_factory=list)  # [(wq, wk, wv)] per head
    w_out: ad.Tensor = None
    ln1_g: ad.Tensor = None
    ln1_b: ad.Tensor = None
    ffn_w1: ad.Tensor = None
    ffn_b1: ad.Tensor = None
    ffn_w2: ad.Tensor = None
    ffn_b2: ad.Tensor = None
    ln2_g: ad.Tensor = None
    ln2_b: ad.Tensor = None

    def named_tensors(self, prefix=""):
        out = [(f"{prefix}w_in", self.w_in)]
        if self.gate_w is not None:
            out += [(f"{prefix}gate_w", self.gate_w), (f"{prefix}gate_b", self.gate_b)]
        for i, (wq, wk, wv) in enumerate(self.head_qkv):
            out += [(f"{prefix}h{i}.wq", wq), (f"{prefix}h{i}.wk", wk), (f"{prefix}h{i}.wv", wv)]
        if self.w_out is not None:
            out += [(f"{prefix}w_out", self.w_out),
                    (f"{prefix}ln1_g", self.ln1_g), (f"{prefix}ln1_b", self.ln1_b)]
        if self.ffn_w1 is not None:
            out += [(f"{prefix}ffn_w1", self.ffn_w1), (f"{prefix}ffn_b1", self.ffn_b1),
                    (f"{prefix}ffn_w2", self.ffn_w2), (f"{prefix}ffn_b2", self.ffn_b2),
                    (f"{prefix}ln2_g", self.ln2_g), (f"{prefix}ln2_b", self.ln2_b)]
        return out


def init_enhancer(rng, d_in, d, heads=4, d_ff=None, variant="full"):
    if variant not in VARIANTS:
        raise ValueError(f"unknown enhancer variant {variant!r}, expected one of {VARIANTS}")
    if d % heads != 0:
        raise ValueError(f"hidden width {d} not divisible by head count {heads}")
    d_ff = d_ff or 4 * d
    p = EnhancerParams(variant=variant, d=d, heads=heads, w_in=glorot(rng, d_in, d))
    if variant in ("full", "gating_only"):
        p.gate_w = glorot(rng, d, d)
        p.gate_b = zeros_param(d)
    if variant in ("full", "attention_only"):
        dh = d // heads
        p.head_qkv = [(glorot(rng, d, dh), glorot(rng, d, dh), glorot(rng, d, dh))
                      for _ in range(heads)]
        p.w_out = glorot(rng, d, d)
        p.ln1_g, p.ln1_b = ones_param(d), zeros_param(d)
    if variant == "full":
        p.ffn_w1, p.ffn_b1 = glorot(rng, d, d_ff), zeros_param(d_ff)
        p.ffn_w2, p.ffn_b2 = glorot(rng, d_ff, d), zeros_param(d)
        p.ln2_g, p.ln2_b = ones_param(d), zeros_param(d)
    return p


def _self_attention(x, params, dropout_p, train_mode, rng):
    dh = params.d // params.heads
    out = None
    for wq, wk, wv in params.head_qkv:
        q, k, v = ad.matmul(x, wq), ad.matmul(x, wk), ad.matmul(x, wv)
        head = ad.scaled_dot_attention(q, k, v, d_k=dh)
        out = head if out is None else ad.concat(out, head, axis=1)
    out = ad.matmul(out, params.w_out)
    if train_mode and dropout_p > 0:
        out = ad.dropout(out, dropout_p, rng)
    return out


def enhance_forward(feats, params, dropout_p=0.0, train_mode=False, rng=None):
    """Apply the enhancement block (or its ablated variant) to an (N, d_in) matrix."""
    x0 = ad.matmul(ad.as_tensor(feats), params.w_in)
    if params.variant == "removed":
        return x0
    if params.variant == "attention_only":
        attn = _self_attention(x0, params, dropout_p, train_mode, rng)
        return ad.layer_norm(x0 + attn, params.ln1_g, params.ln1_b)
    gate = ad.sigmoid(ad.matmul(x0, params.gate_w) + params.gate_b)
    x1 = ad.mul(x0, gate)
    if params.variant == "gating_only":
        return x1
    attn = _self_attention(x1, params, dropout_p, train_mode, rng)
    x2 = ad.layer_norm(x1 + attn, params.ln1_g, params.ln1_b)
    hidden = ad.relu(ad.matmul(x2, params.ffn_w1) + params.ffn_b1)
    if train_mode and dropout_p > 0:
        hidden = ad.dropout(hidden, dropout_p, rng)
    ffn = ad.matmul(hidden, params.ffn_w2) + params.ffn_b2
    return ad.layer_norm(x2 + ffn, params.ln2_g, params.ln2_b)

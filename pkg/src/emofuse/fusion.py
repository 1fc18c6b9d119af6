"""Cross-graph attention fusion and the iterative fusion schedule.

Each graph's node features are refined by a 1D convolution over the node
sequence (plus LayerNorm for the two query graphs). Two branches then run
per round: the VA and TV graphs query the AT graph through scaled QKV
attention, and each attended result is fused with its query via concat ->
conv -> sigmoid*tanh gate. Branch outputs feed the next round; after the
last round a per-utterance readout concatenates the two branches.

The AT graph serves only as the key/value source, so its refinement is
conv-only (post-conv features are what attention consumes).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .enhance import glorot, zeros_param, ones_param

FUSION_VARIANTS = ("full", "no_caf", "no_gating", "single_round")


@dataclass
class BranchParams:
    wq: ad.Tensor
    wk: ad.Tensor
    wv: ad.Tensor
    caf_kernel: ad.Tensor   # (k, 2d, d)
    caf_bias: ad.Tensor     # (d,)
    wf: ad.Tensor
    bf: ad.Tensor
    wg: ad.Tensor = None    # absent under the no_gating variant
    bg: ad.Tensor = None

    def named_tensors(self, prefix=""):
        out = [(f"{prefix}wq", self.wq), (f"{prefix}wk", self.wk), (f"{prefix}wv", self.wv),
               (f"{prefix}caf_kernel", self.caf_kernel), (f"{prefix}caf_bias", self.caf_bias),
               (f"{prefix}wf", self.wf), (f"{prefix}bf", self.bf)]
        if self.wg is not None:
            out += [(f"{prefix}wg", self.wg), (f"{prefix}bg", self.bg)]
        return out


@dataclass
class FusionParams:
    d: int
    variant: str
    conv_kernels: dict      # tag -> (k, d, d) Tensor
    conv_biases: dict       # tag -> (d,) Tensor
    ln_gammas: dict         # only VA/TV
    ln_betas: dict
    rounds: list = field(default_factory=list)  # [(branch1, branch2)] per round

    def named_tensors(self, prefix=""):
        out = []
        for tag in ("VA", "TV", "AT"):
            out += [(f"{prefix}conv.{tag}.kernel", self.conv_kernels[tag]),
                    (f"{prefix}conv.{tag}.bias", self.conv_biases[tag])]
        for tag in ("VA", "TV"):
            out += [(f"{prefix}ln.{tag}.gamma", self.ln_gammas[tag]),
                    (f"{prefix}ln.{tag}.beta", self.ln_betas[tag])]
        for r, (b1, b2) in enumerate(self.rounds):
            out += b1.named_tensors(f"{prefix}round{r}.b1.")
            out += b2.named_tensors(f"{prefix}round{r}.b2.")
        return out


def _conv_kernel(rng, k, d_in, d_out):
    limit = math.sqrt(6.0 / (k * d_in + d_out))
    return ad.Tensor(rng.uniform(-limit, limit, size=(k, d_in, d_out)), requires_grad=True)


def init_fusion(rng, d, kernel_size=3, rounds=2, variant="full"):
    if variant not in FUSION_VARIANTS:
        raise ValueError(f"unknown fusion variant {variant!r}")
    if variant == "single_round":
        rounds = 1
    p = FusionParams(d=d, variant=variant,
                     conv_kernels={}, conv_biases={}, ln_gammas={}, ln_betas={})
    for tag in ("VA", "TV", "AT"):
        p.conv_kernels[tag] = _conv_kernel(rng, kernel_size, d, d)
        p.conv_biases[tag] = zeros_param(d)
    for tag in ("VA", "TV"):
        p.ln_gammas[tag] = ones_param(d)
        p.ln_betas[tag] = zeros_param(d)
    gated = variant != "no_gating"
    for _ in range(rounds):
        branches = []
        for _ in range(2):
            bp = BranchParams(
                wq=glorot(rng, d, d), wk=glorot(rng, d, d), wv=glorot(rng, d, d),
                caf_kernel=_conv_kernel(rng, kernel_size, 2 * d, d),
                caf_bias=zeros_param(d),
                wf=glorot(rng, d, d), bf=zeros_param(d))
            if gated:
                bp.wg = glorot(rng, d, d)
                bp.bg = zeros_param(d)
            branches.append(bp)
        p.rounds.append(tuple(branches))
    return p


def graph_refine(h, kernel, bias, gamma=None, beta=None):
    """conv1d over the node sequence, then LayerNorm when affines are given."""
    out = ad.conv1d_seq(h, kernel, bias)
    if gamma is not None:
        out = ad.layer_norm(out, gamma, beta)
    return out


def cross_attention(h1, h2, bp):
    """Q from the query graph, K/V from the key graph; scaled row softmax."""
    q = ad.matmul(h1, bp.wq)
    k = ad.matmul(h2, bp.wk)
    v = ad.matmul(h2, bp.wv)
    return ad.scaled_dot_attention(q, k, v, d_k=q.shape[1])


def caf_fuse(h1, attended, bp, gated=True):
    """Concat query + attended features, convolve 2d -> d, then gate.

    Gated form: sigmoid(U wf + bf) * tanh(U wg + bg), bounded in (-1, 1).
    Ungated (C2): a plain linear layer on the conv output.
    """
    u = ad.concat(h1, attended, axis=1)
    u = ad.conv1d_seq(u, bp.caf_kernel, bp.caf_bias)
    if not gated:
        return ad.matmul(u, bp.wf) + bp.bf
    f = ad.sigmoid(ad.matmul(u, bp.wf) + bp.bf)
    g = ad.tanh(ad.matmul(u, bp.wg) + bp.bg)
    return ad.mul(f, g)


def fusion_forward(h_va, h_tv, h_at, params):
    """Run all fusion rounds; returns the two final branch outputs (2N, d)."""
    q1 = graph_refine(h_va, params.conv_kernels["VA"], params.conv_biases["VA"],
                      params.ln_gammas["VA"], params.ln_betas["VA"])
    q2 = graph_refine(h_tv, params.conv_kernels["TV"], params.conv_biases["TV"],
                      params.ln_gammas["TV"], params.ln_betas["TV"])
    key = graph_refine(h_at, params.conv_kernels["AT"], params.conv_biases["AT"])
    gated = params.variant != "no_gating"
    self_only = params.variant == "no_caf"
    for b1, b2 in params.rounds:
        a1 = cross_attention(q1, q1 if self_only else key, b1)
        a2 = cross_attention(q2, q2 if self_only else key, b2)
        q1 = caf_fuse(q1, a1, b1, gated=gated)
        q2 = caf_fuse(q2, a2, b2, gated=gated)
    return q1, q2


def readout(branch1, branch2, n):
    """Per-utterance vectors: mean of each branch's two modality nodes, concatenated.

    (2N, d) branch outputs become (N, 2d) utterance features.
    """
    parts = []
    for b in (branch1, branch2):
        first = ad.narrow(b, 0, 0, n)
        second = ad.narrow(b, 0, n, 2 * n)
        parts.append(ad.mul(first + second, 0.5))
    return ad.concat(parts[0], parts[1], axis=1)

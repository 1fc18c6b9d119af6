"""Cross-modal bipartite graphs with learned edge weights and GCN updates.

Each graph stacks two modalities' utterance features into a 2N-node matrix,
scores every cross-modal pair with a bilinear form, squashes the scores with
a sigmoid into a symmetric block-anti-diagonal adjacency, and propagates
features through symmetric-normalized graph convolution with self-loops.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .enhance import glorot, zeros_param

PAIR_TAGS = ("VA", "TV", "AT")
GRAPH_VARIANTS = ("full", "VA_only", "VA_TV", "none")

# which pairs get a scored adjacency + GCN under each variant
ACTIVE_PAIRS = {
    "full": ("VA", "TV", "AT"),
    "VA_only": ("VA",),
    "VA_TV": ("VA", "TV"),
    "none": (),
}


@dataclass
class EdgeScorerParams:
    w: ad.Tensor  # (d, d) bilinear form
    b: ad.Tensor  # scalar bias

    def named_tensors(self, prefix=""):
        return [(f"{prefix}w", self.w), (f"{prefix}b", self.b)]


@dataclass
class CrossModalGraph:
    tag: str
    node_features: ad.Tensor       # (2N, d)
    adjacency: ad.Tensor = None    # (2N, 2N), None for pass-through graphs


def init_edge_scorer(rng, d):
    return EdgeScorerParams(w=glorot(rng, d, d), b=zeros_param(()))


def score_edges(f1, f2, params):
    """Bilinear pair scores: E[i, j] = f1[i] . W . f2[j] + b."""
    f1, f2 = ad.as_tensor(f1), ad.as_tensor(f2)
    if f1.shape != f2.shape:
        raise ad.ShapeError(f"score_edges: shapes {f1.shape} and {f2.shape} differ")
    return ad.matmul(ad.matmul(f1, params.w), ad.transpose(f2)) + params.b


def build_adjacency(e):
    """Embed sigmoid(E) into a symmetric 2N x 2N bipartite adjacency.

    Within-modality blocks and the diagonal stay exactly zero.
    """
    e = ad.as_tensor(e)
    n = e.shape[0]
    s = ad.sigmoid(e)
    z = ad.zeros((n, n))
    top = ad.concat(z, s, axis=1)
    bottom = ad.concat(ad.transpose(s), z, axis=1)
    return ad.concat(top, bottom, axis=0)


def gcn_layer(a, h, w):
    """ReLU(D^-1/2 (A + I) D^-1/2 H W) with self-loops guaranteeing D_ii >= 1."""
    a, h = ad.as_tensor(a), ad.as_tensor(h)
    a_tilde = a + ad.eye(a.shape[0])
    deg = ad.sum_(a_tilde, axis=1, keepdims=True)       # (2N, 1)
    d_inv = ad.power(deg, -0.5)
    norm = ad.mul(ad.mul(d_inv, a_tilde), ad.transpose(d_inv))
    return ad.relu(ad.matmul(ad.matmul(norm, h), w))


def init_gcn_weights(rng, d, layers):
    return [glorot(rng, d, d) for _ in range(layers)]


def build_graphs(f_t, f_a, f_v, scorers, gcn_weights, graph_variant="full"):
    """Assemble the three pair graphs and apply GCN updates to the active ones.

    Inactive pairs (per the B-series ablations) pass their stacked features
    through unchanged with no adjacency.
    """
    if graph_variant not in GRAPH_VARIANTS:
        raise ValueError(f"unknown graph variant {graph_variant!r}")
    pairs = {"VA": (f_v, f_a), "TV": (f_t, f_v), "AT": (f_a, f_t)}
    active = ACTIVE_PAIRS[graph_variant]
    graphs = {}
    for tag in PAIR_TAGS:
        f1, f2 = pairs[tag]
        h = ad.concat(f1, f2, axis=0)
        if tag in active:
            e = score_edges(f1, f2, scorers[tag])
            adj = build_adjacency(e)
            for w in gcn_weights[tag]:
                h = gcn_layer(adj, h, w)
            graphs[tag] = CrossModalGraph(tag=tag, node_features=h, adjacency=adj)
        else:
            graphs[tag] = CrossModalGraph(tag=tag, node_features=h)
    return graphs

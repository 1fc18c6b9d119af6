"""Model configuration and the end-to-end per-conversation forward pass."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import enhance, fusion, graphs
from .enhance import glorot, zeros_param

# ablation tag -> config override
ABLATIONS = {
    "A1": {"enhance_variant": "removed"},
    "A2": {"enhance_variant": "gating_only"},
    "A3": {"enhance_variant": "attention_only"},
    "B1": {"graph_variant": "VA_only"},
    "B2": {"graph_variant": "VA_TV"},
    "B3": {"graph_variant": "none"},
    "C1": {"fusion_variant": "no_caf"},
    "C2": {"fusion_variant": "no_gating"},
    "D1": {"fusion_variant": "single_round"},
}


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    # architecture
    d: int = 64
    d_ff: int = 0               # 0 -> 4*d
    heads: int = 4
    conv_kernel: int = 3
    gcn_layers: int = 1
    fusion_rounds: int = 2
    share_gcn_weights: bool = False
    dropout: float = 0.2
    # ablation switches
    enhance_variant: str = "full"
    graph_variant: str = "full"
    fusion_variant: str = "full"
    # data
    classes: int = 6
    dim_text: int = 32
    dim_audio: int = 32
    dim_visual: int = 32
    split_seed: int = 1234
    split_ratios: tuple = (0.8, 0.1, 0.1)
    # optimization
    lr: float = 1e-4
    lr_min: float = 0.0         # >0 enables cosine decay down to this value
    weight_decay: float = 1e-3
    batch_size: int = 16
    epochs: int = 50
    seed: int = 0
    grad_clip: float = 5.0      # 0 disables
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    target_train_acc: float = 0.0  # >0 enables early stop on train accuracy
    # reserved loss weights: auxiliary loss terms are not part of this
    # artifact, so anything other than 1.0 is rejected
    loss_weight_s: float = 1.0
    loss_weight_o: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.enhance_variant not in enhance.VARIANTS:
            raise ConfigError(f"enhance_variant {self.enhance_variant!r} not in {enhance.VARIANTS}")
        if self.graph_variant not in graphs.GRAPH_VARIANTS:
            raise ConfigError(f"graph_variant {self.graph_variant!r} not in {graphs.GRAPH_VARIANTS}")
        if self.fusion_variant not in fusion.FUSION_VARIANTS:
            raise ConfigError(f"fusion_variant {self.fusion_variant!r} not in {fusion.FUSION_VARIANTS}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if self.d % self.heads != 0:
            raise ConfigError(f"hidden width {self.d} not divisible by {self.heads} heads")
        if self.conv_kernel % 2 == 0:
            raise ConfigError(f"conv_kernel must be odd, got {self.conv_kernel}")
        if self.loss_weight_s != 1.0 or self.loss_weight_o != 1.0:
            raise ConfigError("loss_weight_s/loss_weight_o are reserved and must stay 1.0")

    @property
    def effective_d_ff(self):
        return self.d_ff if self.d_ff > 0 else 4 * self.d

    @property
    def effective_rounds(self):
        return 1 if self.fusion_variant == "single_round" else self.fusion_rounds

    def with_ablation(self, tag):
        if tag in (None, "", "full"):
            return dataclasses.replace(self)
        if tag not in ABLATIONS:
            raise ConfigError(f"unknown ablation tag {tag!r}, expected one of {sorted(ABLATIONS)}")
        return dataclasses.replace(self, **ABLATIONS[tag])

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["split_ratios"] = list(self.split_ratios)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "split_ratios" in d:
            d["split_ratios"] = tuple(d["split_ratios"])
        return cls(**d)


def classify(z, w_c, b_c):
    """Row-stochastic class probabilities: softmax(z W_c^T + b_c)."""
    return ad.softmax_rows(ad.matmul(z, ad.transpose(w_c)) + b_c)


def cross_entropy(probs, labels):
    """Mean negative log-probability of the true class, floored at 1e-12."""
    return ad.mul(cross_entropy_sum(probs, labels), 1.0 / len(labels))


def cross_entropy_sum(probs, labels):
    labels = np.asarray(labels, dtype=np.int64)
    n, c = probs.shape
    if len(labels) != n:
        raise ad.ShapeError(f"{len(labels)} labels for {n} prediction rows")
    if len(labels) and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels outside [0, {c})")
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    picked = ad.sum_(ad.mul(probs, ad.Tensor(onehot)), axis=1)
    return ad.mul(ad.sum_(ad.log(ad.maximum_const(picked, 1e-12))), -1.0)


class Model:
    """All parameters plus the conversation-level forward pass."""

    def __init__(self, config, rng):
        self.config = config
        d = config.d
        self.enhancers = {}
        for modality, d_in in (("text", config.dim_text), ("audio", config.dim_audio),
                               ("visual", config.dim_visual)):
            self.enhancers[modality] = enhance.init_enhancer(
                rng, d_in, d, heads=config.heads, d_ff=config.effective_d_ff,
                variant=config.enhance_variant)
        active = graphs.ACTIVE_PAIRS[config.graph_variant]
        self.scorers = {tag: graphs.init_edge_scorer(rng, d) for tag in active}
        if config.share_gcn_weights:
            shared = graphs.init_gcn_weights(rng, d, config.gcn_layers)
            self.gcn_weights = {tag: shared for tag in active}
        else:
            self.gcn_weights = {tag: graphs.init_gcn_weights(rng, d, config.gcn_layers)
                                for tag in active}
        self.fusion = fusion.init_fusion(rng, d, kernel_size=config.conv_kernel,
                                         rounds=config.effective_rounds,
                                         variant=config.fusion_variant)
        self.w_c = glorot(rng, 2 * d, config.classes,
                          shape=(config.classes, 2 * d))
        self.b_c = zeros_param(config.classes)
        self._names = [name for name, _ in self._named()]

    def _named(self):
        out = []
        for modality in ("text", "audio", "visual"):
            out += self.enhancers[modality].named_tensors(f"enh.{modality}.")
        seen = set()
        for tag in graphs.PAIR_TAGS:
            if tag in self.scorers:
                out += self.scorers[tag].named_tensors(f"scorer.{tag}.")
                for i, w in enumerate(self.gcn_weights[tag]):
                    if id(w) in seen:
                        continue
                    seen.add(id(w))
                    out += [(f"gcn.{tag}.l{i}", w)]
        out += self.fusion.named_tensors("fusion.")
        out += [("cls.w", self.w_c), ("cls.b", self.b_c)]
        return out

    def parameters(self):
        """Name -> Tensor in a stable order."""
        return dict(self._named())

    def parameter_count(self):
        return sum(t.size for t in self.parameters().values())

    def zero_grad(self):
        for t in self.parameters().values():
            t.zero_grad()

    def forward(self, conv, train_mode=False, rng=None):
        """Forward one conversation; returns (probs (N, C), z (N, 2d)) tensors."""
        cfg = self.config
        n = conv.n_utterances
        enhanced = {}
        for modality in ("text", "audio", "visual"):
            enhanced[modality] = enhance.enhance_forward(
                conv.modality(modality), self.enhancers[modality],
                dropout_p=cfg.dropout, train_mode=train_mode, rng=rng)
        g = graphs.build_graphs(enhanced["text"], enhanced["audio"], enhanced["visual"],
                                self.scorers, self.gcn_weights, cfg.graph_variant)
        b1, b2 = fusion.fusion_forward(g["VA"].node_features, g["TV"].node_features,
                                       g["AT"].node_features, self.fusion)
        z = fusion.readout(b1, b2, n)
        probs = classify(z, self.w_c, self.b_c)
        return probs, z

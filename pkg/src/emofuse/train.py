"""Training loop, AdamW, checkpointing, evaluation, and the ablation grid."""
from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import data as dataio
from . import metrics as met
from .model import ConfigError, Model, ModelConfig, cross_entropy_sum


class TrainingDiverged(RuntimeError):
    """Raised when a non-finite loss aborts training; names the offending op."""


def make_rngs(seed):
    """Counter-based (Philox) generators split from one seed: (init, train)."""
    init_ss, train_ss = np.random.SeedSequence(seed).spawn(2)
    return (np.random.Generator(np.random.Philox(init_ss)),
            np.random.Generator(np.random.Philox(train_ss)))


def rng_state_to_json(rng):
    def conv(x):
        if isinstance(x, dict):
            return {k: conv(v) for k, v in x.items()}
        if isinstance(x, np.ndarray):
            return {"__ndarray__": x.tolist(), "dtype": str(x.dtype)}
        return x
    return conv(rng.bit_generator.state)


def rng_state_from_json(state):
    def conv(x):
        if isinstance(x, dict):
            if "__ndarray__" in x:
                return np.array(x["__ndarray__"], dtype=x["dtype"])
            return {k: conv(v) for k, v in x.items()}
        return x
    return conv(state)


# ---------------------------------------------------------------------------
# AdamW

def adamw_step(p, g, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
    """One decoupled-weight-decay Adam update; returns (p, m, v) arrays."""
    m = beta1 * m + (1.0 - beta1) * g
    v = beta2 * v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    p = p - lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p)
    return p, m, v


class AdamW:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, params, lr):
        self.t += 1
        for name, p in params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            p.data, self.m[name], self.v[name] = adamw_step(
                p.data, g, self.m[name], self.v[name], self.t, lr,
                self.beta1, self.beta2, self.eps, self.weight_decay)


def clip_gradients(params, max_norm):
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class EvalResult:
    loss: float
    y_true: np.ndarray
    y_pred: np.ndarray
    features: np.ndarray     # fused per-utterance vectors, (M, 2d)

    def report(self, classes, class_names=None):
        return met.compute_report(self.y_true, self.y_pred, classes, class_names)


def evaluate(model, fs):
    """Deterministic eval-mode pass over every conversation in a feature set."""
    y_true, y_pred, feats = [], [], []
    loss_sum, count = 0.0, 0
    with ad.no_grad():
        for conv in fs.conversations:
            probs, z = model.forward(conv, train_mode=False)
            loss_sum += float(cross_entropy_sum(probs, conv.labels).data)
            count += conv.n_utterances
            y_true.append(conv.labels)
            y_pred.append(probs.data.argmax(axis=1))
            feats.append(z.data)
    return EvalResult(loss=loss_sum / max(count, 1),
                      y_true=np.concatenate(y_true),
                      y_pred=np.concatenate(y_pred),
                      features=np.concatenate(feats))


# ---------------------------------------------------------------------------
# checkpointing

def _blob_name(name):
    return name.replace("/", "_") + ".bin"


def save_checkpoint(ckpt_dir, model, optimizer, train_rng, epoch):
    """JSON header plus float64 little-endian blobs for params and moments."""
    os.makedirs(ckpt_dir, exist_ok=True)
    params = model.parameters()
    header = {
        "config": model.config.to_dict(),
        "epoch": int(epoch),
        "step": int(optimizer.t),
        "rng_state": rng_state_to_json(train_rng),
        "params": {name: list(p.shape) for name, p in params.items()},
    }
    for sub, source in (("params", {n: p.data for n, p in params.items()}),
                        ("adam_m", optimizer.m), ("adam_v", optimizer.v)):
        d = os.path.join(ckpt_dir, sub)
        os.makedirs(d, exist_ok=True)
        for name, arr in source.items():
            arr.astype("<f8").tofile(os.path.join(d, _blob_name(name)))
    with open(os.path.join(ckpt_dir, "checkpoint.json"), "w", encoding="utf-8") as f:
        json.dump(header, f, indent=2)


def load_checkpoint(ckpt_dir):
    path = os.path.join(ckpt_dir, "checkpoint.json")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no checkpoint.json under {ckpt_dir}")
    with open(path, encoding="utf-8") as f:
        header = json.load(f)
    out = {"config": ModelConfig.from_dict(header["config"]),
           "epoch": header["epoch"], "step": header["step"],
           "rng_state": rng_state_from_json(header["rng_state"]),
           "params": {}, "adam_m": {}, "adam_v": {}}
    for sub in ("params", "adam_m", "adam_v"):
        for name, shape in header["params"].items():
            arr = np.fromfile(os.path.join(ckpt_dir, sub, _blob_name(name)), dtype="<f8")
            out[sub][name] = arr.reshape([int(s) for s in shape])
    return out


def _arch_fields(config):
    skip = {"epochs", "target_train_acc", "lr", "lr_min"}
    return {k: v for k, v in config.to_dict().items() if k not in skip}


# ---------------------------------------------------------------------------
# training

@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    train_wf1: float
    valid_loss: float
    valid_acc: float
    valid_wf1: float


@dataclass
class TrainResult:
    model: Model
    optimizer: AdamW
    train_rng: object
    logs: list
    epochs_run: int


def lr_at_epoch(config, epoch):
    if config.lr_min <= 0 or config.epochs <= 1:
        return config.lr
    frac = epoch / (config.epochs - 1)
    return config.lr_min + 0.5 * (config.lr - config.lr_min) * (1 + math.cos(math.pi * frac))


def build_model(config):
    init_rng, train_rng = make_rngs(config.seed)
    return Model(config, init_rng), train_rng


def train(train_set, valid_set, config, resume=None, log_fn=None, checkpoint_dir=None):
    """Train on conversation batches; deterministic under config.seed.

    resume: checkpoint directory to continue from (bit-exact on the same
    platform). checkpoint_dir: where to save the final state, if given.
    """
    if not train_set.conversations:
        raise ValueError("empty training split")
    model, train_rng = build_model(config)
    params = model.parameters()
    optimizer = AdamW(params, config.adam_beta1, config.adam_beta2,
                      config.adam_eps, config.weight_decay)
    start_epoch = 0
    if resume is not None:
        state = load_checkpoint(resume)
        if _arch_fields(state["config"]) != _arch_fields(config):
            raise ConfigError("checkpoint config is incompatible with the requested config")
        for name, p in params.items():
            p.data = state["params"][name].copy()
        optimizer.m = {n: a.copy() for n, a in state["adam_m"].items()}
        optimizer.v = {n: a.copy() for n, a in state["adam_v"].items()}
        optimizer.t = state["step"]
        train_rng.bit_generator.state = state["rng_state"]
        start_epoch = state["epoch"]

    convs = sorted(train_set.conversations, key=lambda c: c.id)
    logs = []
    epoch = start_epoch
    try:
        with ad.nan_guard():
            for epoch in range(start_epoch, config.epochs):
                lr = lr_at_epoch(config, epoch)
                order = train_rng.permutation(len(convs))
                for lo in range(0, len(convs), config.batch_size):
                    batch = [convs[i] for i in order[lo:lo + config.batch_size]]
                    model.zero_grad()
                    total, n_utt = None, 0
                    for conv in batch:
                        probs, _ = model.forward(conv, train_mode=True, rng=train_rng)
                        ce = cross_entropy_sum(probs, conv.labels)
                        total = ce if total is None else total + ce
                        n_utt += conv.n_utterances
                    loss = ad.mul(total, 1.0 / n_utt)
                    loss.backward()
                    if config.grad_clip > 0:
                        clip_gradients(params, config.grad_clip)
                    optimizer.step(params, lr)

                row = _epoch_metrics(model, train_set, valid_set, epoch, lr, config)
                logs.append(row)
                if log_fn:
                    log_fn(row)
                if 0 < config.target_train_acc <= row.train_acc:
                    epoch += 1
                    break
            else:
                epoch = config.epochs
    except ad.NumericsError as e:
        raise TrainingDiverged(f"non-finite loss at epoch {epoch}: {e}") from e

    if checkpoint_dir is not None:
        save_checkpoint(checkpoint_dir, model, optimizer, train_rng, epoch)
    return TrainResult(model=model, optimizer=optimizer, train_rng=train_rng,
                       logs=logs, epochs_run=epoch)


def _epoch_metrics(model, train_set, valid_set, epoch, lr, config):
    tr = evaluate(model, train_set)
    tr_rep = tr.report(config.classes)
    if valid_set is not None and valid_set.conversations:
        va = evaluate(model, valid_set)
        va_rep = va.report(config.classes)
        v_loss, v_acc, v_wf1 = va.loss, va_rep.accuracy, va_rep.weighted_f1
    else:
        v_loss = v_acc = v_wf1 = float("nan")
    return EpochLog(epoch=epoch, lr=lr, train_loss=tr.loss,
                    train_acc=tr_rep.accuracy, train_wf1=tr_rep.weighted_f1,
                    valid_loss=v_loss, valid_acc=v_acc, valid_wf1=v_wf1)


# ---------------------------------------------------------------------------
# ablation grid

GRID_DEFAULT = ("full", "A1", "A2", "A3", "B1", "B2", "B3", "C1", "C2", "D1")


@dataclass
class AblationRow:
    variant: str
    wf1_mean: float
    acc_mean: float
    wf1_delta: float
    acc_delta: float
    p_value: float          # NaN when fewer than 2 seeds
    param_count: int
    wf1_scores: list
    acc_scores: list


def run_ablation_grid(fs, base_config, variants=GRID_DEFAULT, seeds=(0, 1, 2),
                      eval_split="test", log_fn=None):
    """Train every variant with the same seeds/splits; report mean WF1/Acc,
    deltas vs the full model, and a paired t-test of full vs each variant."""
    train_set, valid_set, test_set = dataio.split(
        fs, base_config.split_ratios, base_config.split_seed)
    eval_set = {"train": train_set, "valid": valid_set, "test": test_set}[eval_split]

    scores = {}
    param_counts = {}
    for variant in variants:
        wf1s, accs = [], []
        for seed in seeds:
            cfg = dataclasses.replace(base_config.with_ablation(variant), seed=seed)
            result = train(train_set, valid_set, cfg)
            rep = evaluate(result.model, eval_set).report(cfg.classes, fs.class_names)
            wf1s.append(rep.weighted_f1)
            accs.append(rep.accuracy)
            param_counts[variant] = result.model.parameter_count()
            if log_fn:
                log_fn(f"{variant} seed={seed} wf1={rep.weighted_f1:.4f} acc={rep.accuracy:.4f}")
        scores[variant] = (wf1s, accs)

    full_wf1, full_acc = scores.get("full", scores[variants[0]])
    rows = []
    for variant in variants:
        wf1s, accs = scores[variant]
        if len(seeds) >= 2:
            p = met.paired_t_test(full_wf1, wf1s).p
        else:
            p = float("nan")
        rows.append(AblationRow(
            variant=variant,
            wf1_mean=float(np.mean(wf1s)), acc_mean=float(np.mean(accs)),
            wf1_delta=float(np.mean(wf1s) - np.mean(full_wf1)),
            acc_delta=float(np.mean(accs) - np.mean(full_acc)),
            p_value=p, param_count=param_counts[variant],
            wf1_scores=wf1s, acc_scores=accs))
    return rows

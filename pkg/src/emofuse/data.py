"""Feature-set storage, synthetic data generation, and split management.

On-disk layout: one UTF-8 JSON manifest plus one raw float64 little-endian
row-major blob per (conversation, modality). All feature rows are
L2-normalized at ingestion; all-zero rows are kept as-is (missing modality).
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

MANIFEST_VERSION = 1
MODALITIES = ("text", "audio", "visual")


class DataError(Exception):
    pass


class ManifestError(DataError):
    pass


class MissingBlobError(DataError):
    pass


class TruncatedBlobError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass


class LabelRangeError(DataError):
    pass


@dataclass
class Conversation:
    id: str
    text_features: np.ndarray   # (N, d_t)
    audio_features: np.ndarray  # (N, d_a)
    visual_features: np.ndarray # (N, d_v)
    labels: np.ndarray          # (N,) int

    @property
    def n_utterances(self):
        return len(self.labels)

    def modality(self, name):
        return getattr(self, f"{name}_features")


@dataclass
class FeatureSet:
    conversations: list
    dims: dict                  # {"text": d_t, "audio": d_a, "visual": d_v}
    class_names: list = field(default_factory=list)

    @property
    def class_count(self):
        return len(self.class_names)

    @property
    def n_utterances(self):
        return sum(c.n_utterances for c in self.conversations)

    def validate(self):
        c_count = self.class_count
        for conv in self.conversations:
            n = conv.n_utterances
            for m in MODALITIES:
                feats = conv.modality(m)
                if feats.shape != (n, self.dims[m]):
                    raise DimensionMismatchError(
                        f"conversation {conv.id!r} {m} features {feats.shape}, "
                        f"expected ({n}, {self.dims[m]})")
            if len(conv.labels) and (conv.labels.min() < 0 or conv.labels.max() >= c_count):
                raise LabelRangeError(
                    f"conversation {conv.id!r} has labels outside [0, {c_count})")


def l2_normalize_rows(m):
    """Divide each nonzero row by its Euclidean norm; zero rows pass through.

    Rows whose norm is already within 1e-6 of 1 are left untouched so that
    save/load round trips are bit-exact.
    """
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    needs = (norms != 0.0) & (np.abs(norms - 1.0) > 1e-6)
    return np.where(needs, m / np.where(norms == 0.0, 1.0, norms), m)


# ---------------------------------------------------------------------------
# manifest + blob IO

def _blob_path(conv_id, modality):
    return f"{conv_id}_{modality}.bin"


def save_featureset(fs, out_dir):
    """Write manifest.json plus per-(conversation, modality) float64 blobs."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for conv in fs.conversations:
        blobs = {}
        for m in MODALITIES:
            rel = _blob_path(conv.id, m)
            conv.modality(m).astype("<f8").tofile(os.path.join(out_dir, rel))
            blobs[m] = rel
        entries.append({
            "id": conv.id,
            "n_utterances": int(conv.n_utterances),
            "labels": [int(x) for x in conv.labels],
            "blobs": blobs,
        })
    manifest = {
        "version": MANIFEST_VERSION,
        "dims": {m: int(fs.dims[m]) for m in MODALITIES},
        "classes": list(fs.class_names),
        "conversations": entries,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    return path


def load_featureset(manifest_path):
    """Parse, validate, and row-normalize a feature set from disk."""
    try:
        with open(manifest_path, encoding="utf-8") as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {manifest_path}") from None
    except json.JSONDecodeError as e:
        raise ManifestError(f"manifest is not valid JSON: {manifest_path}: {e}") from None
    for key in ("version", "dims", "classes", "conversations"):
        if key not in manifest:
            raise ManifestError(f"manifest missing field {key!r}")
    dims = {m: int(manifest["dims"][m]) for m in MODALITIES}
    base = os.path.dirname(os.path.abspath(manifest_path))
    class_count = len(manifest["classes"])

    conversations = []
    for entry in manifest["conversations"]:
        n = int(entry["n_utterances"])
        labels = np.asarray(entry["labels"], dtype=np.int64)
        if len(labels) != n:
            raise ManifestError(f"conversation {entry['id']!r}: {len(labels)} labels for {n} utterances")
        if n and (labels.min() < 0 or labels.max() >= class_count):
            raise LabelRangeError(
                f"conversation {entry['id']!r} has labels outside [0, {class_count})")
        feats = {}
        for m in MODALITIES:
            rel = entry["blobs"][m]
            path = os.path.join(base, rel)
            if not os.path.exists(path):
                raise MissingBlobError(f"blob not found: {path}")
            expected = n * dims[m] * 8
            actual = os.path.getsize(path)
            if actual != expected:
                raise TruncatedBlobError(
                    f"blob {path}: {actual} bytes, expected {expected} ({n}x{dims[m]} float64)")
            raw = np.fromfile(path, dtype="<f8").reshape(n, dims[m])
            feats[m] = l2_normalize_rows(raw)
        conversations.append(Conversation(
            id=str(entry["id"]),
            text_features=feats["text"],
            audio_features=feats["audio"],
            visual_features=feats["visual"],
            labels=labels,
        ))
    fs = FeatureSet(conversations=conversations, dims=dims,
                    class_names=list(manifest["classes"]))
    fs.validate()
    return fs


def fingerprint(manifest_path):
    """SHA-256 over the manifest bytes plus every referenced blob, in order."""
    h = hashlib.sha256()
    with open(manifest_path, "rb") as f:
        raw = f.read()
    h.update(raw)
    manifest = json.loads(raw)
    base = os.path.dirname(os.path.abspath(manifest_path))
    for entry in manifest["conversations"]:
        for m in MODALITIES:
            with open(os.path.join(base, entry["blobs"][m]), "rb") as f:
                h.update(f.read())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# synthetic data

def synth_dataset(seed, conversations, n_range=(4, 8), dims=(32, 32, 32), classes=6,
                  cluster_spread=0.05):
    """Gaussian class clusters per modality; labels round-robin with jitter.

    Each class gets one random center per modality; an utterance's features are
    that center plus isotropic noise scaled by cluster_spread. Labels cycle
    through a shuffled class order (so every class appears) with a small
    random-replacement jitter.
    """
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    d_t, d_a, d_v = dims
    if min(dims) < 2:
        raise ValueError(f"modality dims must be >= 2, got {dims}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    centers = {m: rng.normal(size=(classes, d)) for m, d in
               zip(MODALITIES, (d_t, d_a, d_v))}
    cycle = rng.permutation(classes)
    counter = 0
    convs = []
    for ci in range(conversations):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        labels = np.empty(n, dtype=np.int64)
        for u in range(n):
            lab = cycle[counter % classes]
            counter += 1
            if rng.random() < 0.1:  # jitter
                lab = int(rng.integers(classes))
            labels[u] = lab
        feats = {}
        for m in MODALITIES:
            noise = rng.normal(size=(n, centers[m].shape[1]))
            feats[m] = l2_normalize_rows(centers[m][labels] + cluster_spread * noise)
        convs.append(Conversation(
            id=f"conv{ci:04d}",
            text_features=feats["text"],
            audio_features=feats["audio"],
            visual_features=feats["visual"],
            labels=labels,
        ))
    fs = FeatureSet(conversations=convs,
                    dims={"text": d_t, "audio": d_a, "visual": d_v},
                    class_names=[f"class{c}" for c in range(classes)])
    fs.validate()
    return fs


def split(fs, ratios=(0.8, 0.1, 0.1), seed=1234):
    """Disjoint, exhaustive conversation-level partition, deterministic under seed."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    n = len(fs.conversations)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    order = rng.permutation(n)
    n_train = int(round(ratios[0] * n))
    n_valid = int(round(ratios[1] * n))
    n_train = min(n_train, n)
    n_valid = min(n_valid, n - n_train)
    cuts = (order[:n_train], order[n_train:n_train + n_valid], order[n_train + n_valid:])
    parts = []
    for name, idx in zip(("train", "valid", "test"), cuts):
        if len(idx) == 0:
            raise ValueError(f"split produced an empty {name} part "
                             f"(n={n}, ratios={ratios})")
        parts.append(FeatureSet(
            conversations=[fs.conversations[i] for i in sorted(idx)],
            dims=dict(fs.dims), class_names=list(fs.class_names)))
    return tuple(parts)

"""Evaluation: confusion matrix, weighted F1, paired t-test, 2D projection.

The Student-t CDF is evaluated internally through the regularized incomplete
beta function (continued-fraction form), so no stats dependency is needed;
target accuracy ~1e-10 over the df/t ranges seen here.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class MetricsReport:
    confusion: np.ndarray       # (C, C) ints, rows = true, cols = predicted
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    weighted_f1: float
    accuracy: float
    macro_class_accuracy: float
    class_names: list = field(default_factory=list)

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "weighted_f1": self.weighted_f1,
            "macro_class_accuracy": self.macro_class_accuracy,
            "per_class": [
                {"class": self.class_names[c] if self.class_names else str(c),
                 "precision": float(self.precision[c]),
                 "recall": float(self.recall[c]),
                 "f1": float(self.f1[c]),
                 "support": int(self.support[c])}
                for c in range(len(self.support))
            ],
        }


def confusion_matrix(y_true, y_pred, classes):
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    for name, arr in (("true", y_true), ("predicted", y_pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= classes):
            raise ValueError(f"{name} labels outside [0, {classes})")
    m = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(m, (y_true, y_pred), 1)
    return m


def per_class_scores(confusion):
    """Precision/recall/F1/support per class; zero where undefined."""
    confusion = np.asarray(confusion)
    support = confusion.sum(axis=1)
    predicted = confusion.sum(axis=0)
    diag = np.diag(confusion).astype(np.float64)
    precision = np.divide(diag, predicted, out=np.zeros_like(diag), where=predicted > 0)
    recall = np.divide(diag, support, out=np.zeros_like(diag), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(diag), where=denom > 0)
    return precision, recall, f1, support


def weighted_f1(y_true, y_pred, classes):
    """Support-weighted mean of per-class F1 scores."""
    y_true = np.asarray(y_true)
    if y_true.size == 0:
        raise ValueError("weighted_f1 needs at least one sample")
    conf = confusion_matrix(y_true, y_pred, classes)
    _, _, f1, support = per_class_scores(conf)
    return float((support / support.sum() * f1).sum())


def per_class_accuracy(confusion):
    """Per-class recall vector and its mean over classes with support."""
    _, recall, _, support = per_class_scores(confusion)
    present = support > 0
    mean = float(recall[present].mean()) if present.any() else 0.0
    return recall, mean, present


def compute_report(y_true, y_pred, classes, class_names=None):
    conf = confusion_matrix(y_true, y_pred, classes)
    precision, recall, f1, support = per_class_scores(conf)
    total = conf.sum()
    _, macro_acc, _ = per_class_accuracy(conf)
    return MetricsReport(
        confusion=conf, precision=precision, recall=recall, f1=f1, support=support,
        weighted_f1=float((support / max(total, 1) * f1).sum()),
        accuracy=float(np.diag(conf).sum() / max(total, 1)),
        macro_class_accuracy=macro_acc,
        class_names=list(class_names) if class_names else [str(c) for c in range(classes)])


# ---------------------------------------------------------------------------
# paired t-test

def _betacf(a, b, x, max_iter=300, eps=1e-15):
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    return h


def betainc_regularized(a, b, x):
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t, df):
    """Two-sided p-value for a Student-t statistic with df degrees of freedom."""
    if df <= 0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return betainc_regularized(df / 2.0, 0.5, x)


@dataclass
class TTestResult:
    t: float
    p: float
    significant: bool
    degenerate: bool = False


def paired_t_test(scores_a, scores_b, alpha=0.05):
    """Two-sided paired t-test on score differences.

    Zero-variance differences: p=1 when all differences are zero, else the
    degenerate p=0 case (flagged).
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired samples must be equal-length 1D, got {a.shape} vs {b.shape}")
    n = len(a)
    if n < 2:
        raise ValueError(f"paired t-test needs n >= 2, got n={n}")
    d = a - b
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(t=0.0, p=1.0, significant=False)
        return TTestResult(t=math.copysign(math.inf, mean), p=0.0,
                           significant=True, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    p = t_two_sided_p(t, n - 1)
    return TTestResult(t=float(t), p=float(p), significant=p < alpha)


# ---------------------------------------------------------------------------
# 2D projection

@dataclass
class Projection:
    coords: np.ndarray          # (M, 2)
    components: np.ndarray      # (2, d)
    eigenvalues: np.ndarray     # (2,)
    rank_deficient: bool


def _power_iteration(c, orth=None, iters=10000, tol=1e-15):
    d = c.shape[0]
    # deterministic init; the small ramp avoids pathological orthogonal starts
    v = 1.0 + 0.01 * np.arange(d)
    if orth is not None:
        v -= (v @ orth) * orth
    v /= np.linalg.norm(v)
    for _ in range(iters):
        w = c @ v
        if orth is not None:
            w -= (w @ orth) * orth
        norm = np.linalg.norm(w)
        if norm < 1e-300:
            return v, 0.0
        w /= norm
        # eigenvectors are sign-ambiguous; compare against both orientations
        if min(np.abs(w - v).max(), np.abs(w + v).max()) < tol:
            v = w
            break
        v = w
    return v, float(v @ c @ v)


def project_2d(features):
    """Top-2 principal components via power iteration with deflation.

    Deterministic: fixed init and a sign convention (largest-magnitude loading
    positive). Rank-deficient inputs get a zero second component, flagged.
    """
    x = np.asarray(features, dtype=np.float64)
    m, d = x.shape
    if m < 2 or d < 2:
        raise ValueError(f"projection needs at least 2x2 input, got {x.shape}")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (m - 1)
    v1, lam1 = _power_iteration(cov)
    deflated = cov - lam1 * np.outer(v1, v1)
    v2, lam2 = _power_iteration(deflated, orth=v1)
    rank_deficient = lam2 <= 1e-12 * max(lam1, 1e-300)
    if rank_deficient:
        v2 = np.zeros(d)
        lam2 = 0.0
    comps = []
    for v in (v1, v2):
        if np.any(v):
            idx = int(np.argmax(np.abs(v)))
            if v[idx] < 0:
                v = -v
        comps.append(v)
    components = np.stack(comps)
    return Projection(coords=xc @ components.T, components=components,
                      eigenvalues=np.array([lam1, lam2]),
                      rank_deficient=rank_deficient)


# ---------------------------------------------------------------------------
# artifact emission

def write_confusion_csv(path, report):
    names = report.class_names
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["true\\pred"] + names)
        for c, row in enumerate(report.confusion):
            w.writerow([names[c]] + [int(x) for x in row])


def write_per_class_csv(path, report):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["class", "precision", "recall", "f1", "support"])
        for c, name in enumerate(report.class_names):
            w.writerow([name, f"{report.precision[c]:.6f}", f"{report.recall[c]:.6f}",
                        f"{report.f1[c]:.6f}", int(report.support[c])])


def write_aggregates_json(path, report, extra=None):
    payload = report.to_dict()
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)


def write_projection_csv(path, coords, labels):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["x", "y", "label"])
        for (x, y), lab in zip(coords, labels):
            w.writerow([f"{x:.10g}", f"{y:.10g}", int(lab)])

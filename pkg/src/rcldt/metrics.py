"""Quantitative evaluation: classification metrics and Fréchet distance.

The Fréchet distance runs over a pluggable feature space; the bundled
feature extractor is the artifact's own pretrained ViT encoder, so absolute
values are not comparable across feature extractors — only orderings under
a fixed extractor are meaningful.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .backbone import encode_representation, encoder_from_checkpoint
from .checkpoint import Checkpoint
from .errors import ConfigError, InputError, NumericError

_EIG_CLAMP = -1e-8


@dataclass
class ClassificationReport:
    """Aggregate and per-class classification quality plus raw scores."""

    accuracy: float
    precision: float
    recall: float
    f1: float
    positive_class: int
    counts: dict
    per_class: list
    n: int
    warnings: list = field(default_factory=list)
    predictions: list | None = None
    scores: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "f1": self.f1,
            "recall": self.recall,
            "precision": self.precision,
            "positive_class": self.positive_class,
            "counts": self.counts,
            "per_class": self.per_class,
            "n": self.n,
            "warnings": self.warnings,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as f:
                f.write(text + "\n")
        return text


def _prf(tp: int, fp: int, fn: int, warnings: list, label) -> tuple[float, float, float]:
    if tp + fp == 0:
        warnings.append(f"class {label}: no positive predictions; precision defined as 0")
        precision = 0.0
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        warnings.append(f"class {label}: no positive truths; recall defined as 0")
        recall = 0.0
    else:
        recall = tp / (tp + fn)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def classification_metrics(y_true, y_pred, positive_class: int = 1) -> ClassificationReport:
    """Accuracy plus one-vs-rest precision/recall/F1; order-invariant."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0:
        raise InputError("empty label lists")
    if y_true.shape != y_pred.shape:
        raise InputError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    if np.any(y_true < 0) or np.any(y_pred < 0):
        raise InputError("labels must be non-negative integers")

    warnings: list[str] = []
    accuracy = float(np.mean(y_true == y_pred))

    def counts_for(c: int):
        tp = int(np.sum((y_pred == c) & (y_true == c)))
        fp = int(np.sum((y_pred == c) & (y_true != c)))
        fn = int(np.sum((y_pred != c) & (y_true == c)))
        tn = int(np.sum((y_pred != c) & (y_true != c)))
        return tp, fp, fn, tn

    n_classes = int(max(y_true.max(), y_pred.max(), positive_class)) + 1
    per_class = []
    for c in range(n_classes):
        tp, fp, fn, tn = counts_for(c)
        p, r, f1 = _prf(tp, fp, fn, warnings, c)
        per_class.append({"class": c, "precision": p, "recall": r, "f1": f1,
                          "support": tp + fn})

    tp, fp, fn, tn = counts_for(positive_class)
    p, r, f1 = _prf(tp, fp, fn, [], positive_class)
    return ClassificationReport(
        accuracy=accuracy, precision=p, recall=r, f1=f1,
        positive_class=positive_class,
        counts={"tp": tp, "fp": fp, "fn": fn, "tn": tn},
        per_class=per_class, n=int(y_true.size), warnings=warnings,
    )


# ---------------------------------------------------------------------------
# Fréchet distance


def _psd_sqrt_eigs(mat: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    sym = 0.5 * (mat + mat.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    if eigvals.min() < _EIG_CLAMP * max(1.0, abs(eigvals).max()):
        raise NumericError(f"{what} has a significantly negative eigenvalue: {eigvals.min()}")
    return np.clip(eigvals, 0.0, None), eigvecs


def frechet_distance(feats_a, feats_b) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    The matrix square root goes through the symmetric eigendecomposition of
    S_a^(1/2) S_b S_a^(1/2); tiny negative eigenvalues from roundoff are
    clamped to zero.
    """
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise InputError(f"feature sets must be 2-d, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[1]:
        raise InputError(f"feature dims disagree: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise InputError("need at least 2 samples per feature set")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InputError("feature sets contain non-finite values")

    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False).reshape(a.shape[1], a.shape[1])
    cov_b = np.cov(b, rowvar=False).reshape(b.shape[1], b.shape[1])

    eigs_a, vecs_a = _psd_sqrt_eigs(cov_a, "cov_a")
    root_a = (vecs_a * np.sqrt(eigs_a)) @ vecs_a.T
    inner = root_a @ cov_b @ root_a
    eigs_m, _ = _psd_sqrt_eigs(inner, "sqrt argument")
    trace_sqrt = float(np.sqrt(eigs_m).sum())

    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_sqrt)


def extract_features(ckpt: Checkpoint, images, batch_size: int = 64) -> np.ndarray:
    """Pooled encoder features, shape (n, repr_dim); deterministic."""
    if not ckpt.has_encoder():
        raise ConfigError("checkpoint lacks an encoder; cannot extract features")
    encoder = encoder_from_checkpoint(ckpt)
    if hasattr(images, "stack"):
        images = images.stack()
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    chunks = [
        encode_representation(encoder, arr[i:i + batch_size]).data
        for i in range(0, arr.shape[0], batch_size)
    ]
    return np.concatenate(chunks, axis=0)

"""Evaluation quantities: pseudo-label error rate, accuracy, mIoU, smoothed
loss traces, and the per-row metrics record the harness logs.

`pseudo_error_rate` follows the per-class recall convention: for each image,
average over the classes present in its ground truth the fraction of that
class's pixels the prediction recovered, then average over images and
subtract from one. Classes absent from an image are skipped in that image's
average; this is the only convention that keeps the rate in [0, 1] on sparse
images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

CSV_FIELDS = (
    "iter",
    "variant",
    "seed",
    "loss_labeled",
    "loss_unlabeled",
    "lambda_mean",
    "pseudo_error",
    "student_eval",
    "teacher_eval",
    "wall_ms",
)


@dataclass
class MetricsRecord:
    """One logging row. Step functions fill the loss fields; the harness fills
    seed and the evaluation fields at logging boundaries."""

    iter: int
    variant: str
    seed: int = -1
    loss_labeled: float = math.nan
    loss_unlabeled: float = math.nan
    lambda_mean: float = math.nan
    pseudo_error: float = math.nan
    student_eval: float = math.nan
    teacher_eval: float = math.nan
    wall_ms: float = 0.0


def _as_images(arr: np.ndarray) -> np.ndarray:
    """Canonical (n_images, n_pixels) view: 1-D and 2-D inputs are one image,
    3-D inputs are stacks of 2-D label maps."""
    a = np.asarray(arr)
    if a.ndim <= 2:
        return a.reshape(1, -1)
    return a.reshape(a.shape[0], -1)


def pseudo_error_rate(pseudo: np.ndarray, truth: np.ndarray, num_classes: int) -> float:
    """One minus the mean per-class pixel recall of `pseudo` against `truth`."""
    if num_classes < 2:
        raise ValueError("need at least two classes")
    p = _as_images(pseudo)
    t = _as_images(truth)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {np.shape(pseudo)} vs {np.shape(truth)}")
    if t.size == 0:
        raise ValueError("no ground-truth pixels")
    image_scores = []
    for i in range(t.shape[0]):
        recalls = []
        for c in range(num_classes):
            total = int((t[i] == c).sum())
            if total == 0:
                continue  # class absent from this image
            correct = int(((t[i] == c) & (p[i] == c)).sum())
            recalls.append(correct / total)
        image_scores.append(sum(recalls) / len(recalls))
    return 1.0 - sum(image_scores) / len(image_scores)


def miou(pred: np.ndarray, truth: np.ndarray, num_classes: int) -> float:
    """Mean over classes of |pred ∩ truth| / |pred ∪ truth|; classes with an
    empty union are skipped."""
    if num_classes < 2:
        raise ValueError("need at least two classes")
    p = np.asarray(pred).reshape(-1)
    t = np.asarray(truth).reshape(-1)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {np.shape(pred)} vs {np.shape(truth)}")
    ious = []
    for c in range(num_classes):
        inter = int(((p == c) & (t == c)).sum())
        union = int(((p == c) | (t == c)).sum())
        if union == 0:
            continue
        ious.append(inter / union)
    if not ious:
        raise ValueError("no class appears in prediction or truth")
    return sum(ious) / len(ious)


def accuracy(pred: np.ndarray, truth: np.ndarray) -> float:
    p = np.asarray(pred).reshape(-1)
    t = np.asarray(truth).reshape(-1)
    if p.shape != t.shape or p.size == 0:
        raise ValueError("prediction and truth must be equal-length and non-empty")
    return float((p == t).mean())


def ema_trace(values, momentum: float) -> np.ndarray:
    """Exponential moving average of a stream, initialized at its first value."""
    m = float(momentum)
    if not 0.0 <= m < 1.0:
        raise ValueError(f"momentum must be in [0, 1), got {m}")
    v = np.asarray(values, dtype=np.float64)
    out = np.empty_like(v)
    if v.size == 0:
        return out
    out[0] = v[0]
    for i in range(1, v.size):
        out[i] = m * out[i - 1] + (1.0 - m) * v[i]
    return out

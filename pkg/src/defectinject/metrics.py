"""Reference loss and metric kernels with analytic gradients.

These are plain numpy implementations used for verification and as a
ground-truth for training code: per-channel binary cross entropy, Dice
overlap loss, class-weighted cross entropy, and dataset-level IoU from
accumulated confusion counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPSILON = 1e-7  # probability clamp before logs
DICE_SMOOTHING = 1e-6  # keeps Dice finite when both masks are empty


def clamp_predictions(pred: np.ndarray) -> np.ndarray:
    """Clip probabilities into [eps, 1-eps] so log terms stay finite."""
    return np.clip(np.asarray(pred, dtype=np.float64), EPSILON, 1.0 - EPSILON)


def _check_shapes(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")


def bce_loss(pred: np.ndarray, gt: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross entropy over one channel, with d(loss)/d(pred).

    loss = -mean(gt*log(p) + (1-gt)*log(1-p)); inputs are clamped to
    [eps, 1-eps] and the gradient is taken at the clamped point.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_shapes(pred, gt)
    p = clamp_predictions(pred)
    n = p.size
    loss = -float(np.sum(gt * np.log(p) + (1.0 - gt) * np.log1p(-p))) / n
    grad = -(gt / p - (1.0 - gt) / (1.0 - p)) / n
    return loss, grad


def dice_loss(pred: np.ndarray, gt: np.ndarray) -> tuple[float, np.ndarray]:
    """Dice overlap loss 1 - (2*sum(p*g)+s)/(sum(p)+sum(g)+s) with gradient."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_shapes(pred, gt)
    num = 2.0 * float(np.sum(pred * gt)) + DICE_SMOOTHING
    den = float(np.sum(pred) + np.sum(gt)) + DICE_SMOOTHING
    loss = 1.0 - num / den
    grad = -(2.0 * gt * den - num) / (den * den)
    return loss, grad


def inverse_frequency_weights(pixel_counts: dict[int, int]) -> dict[int, float]:
    """Per-class weights proportional to inverse pixel frequency, scaled to
    mean 1 over the provided classes."""
    if not pixel_counts:
        raise ValueError("no classes to weight")
    if any(n <= 0 for n in pixel_counts.values()):
        raise ValueError("pixel counts must be positive")
    raw = {c: 1.0 / n for c, n in pixel_counts.items()}
    mean = sum(raw.values()) / len(raw)
    return {c: w / mean for c, w in raw.items()}


def dataset_pixel_counts(index) -> dict[int, int]:
    """Pixel count per class over a DatasetIndex (class 0 = background)."""
    counts: dict[int, int] = {0: 0}
    for sample in index.free_pool:
        counts[0] += sample.mask.labels.size
    for class_id, pool in index.class_pools.items():
        counts.setdefault(class_id, 0)
        for sample in pool:
            nonzero = int(np.count_nonzero(sample.mask.labels))
            counts[class_id] += nonzero
            counts[0] += sample.mask.labels.size - nonzero
    return {c: n for c, n in counts.items() if n > 0}


def wce_loss(
    pred: np.ndarray, gt: np.ndarray, weights: dict[int, float]
) -> float:
    """Class-weighted BCE over a (C, H, W) prediction map.

    Each pixel's C per-channel BCE terms are scaled by the weight of that
    pixel's ground-truth class, then averaged over channels and pixels. With
    unit weights this equals plain BCE averaged over channels.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.ndim != 3:
        raise ValueError(f"prediction map must be (C, H, W), got {pred.shape}")
    if gt.shape != pred.shape[1:]:
        raise ValueError(f"gt {gt.shape} does not match pred {pred.shape[1:]}")
    present = {int(v) for v in np.unique(gt)}
    missing = present - set(weights)
    if missing:
        raise ValueError(f"missing weights for observed classes {sorted(missing)}")

    weight_map = np.zeros(gt.shape, dtype=np.float64)
    for class_id in present:
        weight_map[gt == class_id] = weights[class_id]

    num_classes, h, w = pred.shape
    p = clamp_predictions(pred)
    total = 0.0
    for c in range(1, num_classes + 1):
        gt_c = (gt == c).astype(np.float64)
        term = gt_c * np.log(p[c - 1]) + (1.0 - gt_c) * np.log1p(-p[c - 1])
        total += -float(np.sum(weight_map * term)) / (h * w)
    return total / num_classes


def combined_loss(
    pred: np.ndarray,
    gt: np.ndarray,
    bce_weight: float = 1.0,
    dice_weight: float = 1.0,
) -> tuple[float, np.ndarray]:
    """BCE + Dice on one channel, equal unit weights by default."""
    b, gb = bce_loss(pred, gt)
    d, gd = dice_loss(pred, gt)
    return bce_weight * b + dice_weight * d, bce_weight * gb + dice_weight * gd


@dataclass(frozen=True)
class ConfusionCounts:
    """tp/fp/fn accumulated over a sample set; order-independent by addition."""

    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if self.tp < 0 or self.fp < 0 or self.fn < 0:
            raise ValueError("confusion counts must be nonnegative")

    def merge(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            tp=self.tp + other.tp, fp=self.fp + other.fp, fn=self.fn + other.fn
        )


def accumulate(
    pred_bin: np.ndarray, gt_bin: np.ndarray, counts: ConfusionCounts
) -> ConfusionCounts:
    """Add one sample's binary confusion to the running counts."""
    pred_bin = np.asarray(pred_bin).astype(bool)
    gt_bin = np.asarray(gt_bin).astype(bool)
    _check_shapes(pred_bin, gt_bin)
    return counts.merge(
        ConfusionCounts(
            tp=int(np.count_nonzero(pred_bin & gt_bin)),
            fp=int(np.count_nonzero(pred_bin & ~gt_bin)),
            fn=int(np.count_nonzero(~pred_bin & gt_bin)),
        )
    )


def accumulate_per_class(
    pred: np.ndarray,
    gt_labels: np.ndarray,
    counts_by_class: dict[int, ConfusionCounts],
    threshold: float = 0.5,
) -> dict[int, ConfusionCounts]:
    """Threshold a (C, H, W) probability map and accumulate each class."""
    pred = np.asarray(pred, dtype=np.float64)
    out = dict(counts_by_class)
    for c in range(1, pred.shape[0] + 1):
        base = out.get(c, ConfusionCounts())
        out[c] = accumulate(pred[c - 1] >= threshold, gt_labels == c, base)
    return out


def dataset_iou(counts: ConfusionCounts) -> float:
    """IoU = tp / (tp + fn + fp); 1.0 when nothing was there and nothing was
    predicted (documented empty-empty convention)."""
    denom = counts.tp + counts.fn + counts.fp
    if denom == 0:
        return 1.0
    return counts.tp / denom

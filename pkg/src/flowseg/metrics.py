"""Threshold-free evaluation of foreground scoring.

All metrics treat foreground as the positive class and sweep the decision
rule "score >= tau -> positive". Ties are handled exactly: AUROC counts
tied positive/negative pairs as one half, and the precision/recall sweep
processes tied scores as a single group.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .feature_store import PixelMask
from .segmentation import LikelihoodMap

AVERAGE_RECALL_STEPS = 101


@dataclass(frozen=True)
class ScoredPixels:
    """Pooled scores (higher = more foreground) and boolean foreground labels."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=np.float64).ravel()
        labels = np.asarray(self.labels).ravel().astype(bool)
        if scores.size == 0:
            raise ValidationError("no scored pixels")
        if scores.size != labels.size:
            raise ValidationError(f"{scores.size} scores but {labels.size} labels")
        if not np.isfinite(scores).all():
            raise ValidationError("scores must be finite")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)

    @property
    def n_pos(self) -> int:
        return int(self.labels.sum())

    @property
    def n_neg(self) -> int:
        return int(self.labels.size - self.labels.sum())

    def require_both_classes(self) -> None:
        if self.n_pos == 0 or self.n_neg == 0:
            raise ValidationError("curve metrics need at least one pixel of each class")


@dataclass(frozen=True)
class MetricsReport:
    auroc: float
    fpr_at_95tpr: float
    average_precision: float
    average_recall: float
    n_pos: int
    n_neg: int

    def to_kv(self) -> str:
        return (
            f"auroc={self.auroc:.6f}, fpr_at_95tpr={self.fpr_at_95tpr:.6f}, "
            f"ap={self.average_precision:.6f}, ar={self.average_recall:.6f}, "
            f"n_pos={self.n_pos}, n_neg={self.n_neg}"
        )


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their group's mean rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_values = values[order]
    boundaries = np.flatnonzero(np.diff(sorted_values) != 0) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [values.size]))
    for start, end in zip(starts, ends):
        ranks[order[start:end]] = 0.5 * (start + end + 1)
    return ranks


def auroc(data: ScoredPixels) -> float:
    """Probability a random positive outscores a random negative, ties at 1/2."""
    data.require_both_classes()
    ranks = _average_ranks(data.scores)
    n_pos, n_neg = data.n_pos, data.n_neg
    rank_sum = ranks[data.labels].sum()
    u_statistic = rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u_statistic / (n_pos * n_neg))


def _sweep_counts(data: ScoredPixels) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative (tp, fp) after each distinct-score group, descending scores."""
    order = np.argsort(-data.scores, kind="stable")
    sorted_scores = data.scores[order]
    sorted_labels = data.labels[order].astype(np.float64)
    tp = np.cumsum(sorted_labels)
    fp = np.cumsum(1.0 - sorted_labels)
    group_ends = np.flatnonzero(np.diff(sorted_scores) != 0)
    group_ends = np.concatenate((group_ends, [sorted_scores.size - 1]))
    return tp[group_ends], fp[group_ends]


def roc_points(data: ScoredPixels) -> tuple[np.ndarray, np.ndarray]:
    """(fpr, tpr) at every distinct threshold, starting from (0, 0)."""
    data.require_both_classes()
    tp, fp = _sweep_counts(data)
    fpr = np.concatenate(([0.0], fp / data.n_neg))
    tpr = np.concatenate(([0.0], tp / data.n_pos))
    return fpr, tpr


def pr_points(data: ScoredPixels) -> tuple[np.ndarray, np.ndarray]:
    """(recall, precision) at every distinct threshold, descending sweep."""
    data.require_both_classes()
    tp, fp = _sweep_counts(data)
    recall = tp / data.n_pos
    precision = tp / (tp + fp)
    return recall, precision


def fpr_at_tpr(data: ScoredPixels, target_tpr: float = 0.95) -> float:
    """Smallest false-positive rate among operating points reaching the target TPR."""
    data.require_both_classes()
    fpr, tpr = roc_points(data)
    eligible = tpr >= target_tpr
    if not eligible.any():
        # The loosest threshold labels everything positive, so TPR = 1 is
        # always reachable; this guards non-positive targets only.
        return 1.0
    return float(fpr[eligible].min())


def average_precision(data: ScoredPixels) -> float:
    """Step-wise area under the precision-recall curve, tied scores grouped."""
    data.require_both_classes()
    recall, precision = pr_points(data)
    previous = np.concatenate(([0.0], recall[:-1]))
    return float(((recall - previous) * precision).sum())


def average_recall(data: ScoredPixels) -> float:
    """Mean TPR over 101 thresholds evenly spaced across the score range.

    This toolkit's definition (reported as such): thresholds run from the
    minimum to the maximum observed score inclusive; a zero score range
    degenerates to the single operating point, whose TPR is 1.
    """
    data.require_both_classes()
    low = data.scores.min()
    high = data.scores.max()
    positives = data.scores[data.labels]
    if low == high:
        return 1.0
    thresholds = np.linspace(low, high, AVERAGE_RECALL_STEPS)
    tpr = (positives[None, :] >= thresholds[:, None]).mean(axis=1)
    return float(tpr.mean())


def compute_report(data: ScoredPixels, target_tpr: float = 0.95) -> MetricsReport:
    return MetricsReport(
        auroc=auroc(data),
        fpr_at_95tpr=fpr_at_tpr(data, target_tpr),
        average_precision=average_precision(data),
        average_recall=average_recall(data),
        n_pos=data.n_pos,
        n_neg=data.n_neg,
    )


def pool_pixels(maps: list[LikelihoodMap], masks: list[PixelMask]) -> ScoredPixels:
    """Flatten aligned maps and ground-truth masks into one scored pool."""
    if not maps or len(maps) != len(masks):
        raise ValidationError(f"got {len(maps)} maps and {len(masks)} masks")
    scores = []
    labels = []
    for lmap, mask in zip(maps, masks):
        if (lmap.height, lmap.width) != (mask.height, mask.width):
            raise ValidationError(
                f"map {lmap.height}x{lmap.width} does not match mask {mask.height}x{mask.width}"
            )
        scores.append(lmap.values.ravel())
        labels.append(mask.values.ravel() == 0)  # mask 0 = foreground = positive
    return ScoredPixels(scores=np.concatenate(scores), labels=np.concatenate(labels))


def evaluate(
    maps: list[LikelihoodMap],
    masks: list[PixelMask],
    target_tpr: float = 0.95,
    per_image: bool = False,
) -> MetricsReport:
    """Pool all pixels across images and compute the four metrics.

    With ``per_image`` the metrics are computed per image and averaged
    instead (counts still report the pooled totals).
    """
    if not per_image:
        return compute_report(pool_pixels(maps, masks), target_tpr)
    reports = [compute_report(pool_pixels([m], [g]), target_tpr) for m, g in zip(maps, masks)]
    pooled = pool_pixels(maps, masks)
    return MetricsReport(
        auroc=float(np.mean([r.auroc for r in reports])),
        fpr_at_95tpr=float(np.mean([r.fpr_at_95tpr for r in reports])),
        average_precision=float(np.mean([r.average_precision for r in reports])),
        average_recall=float(np.mean([r.average_recall for r in reports])),
        n_pos=pooled.n_pos,
        n_neg=pooled.n_neg,
    )


def threshold_at_tpr(data: ScoredPixels, target_tpr: float = 0.95) -> float:
    """Largest threshold whose TPR reaches the target (score >= tau rule)."""
    data.require_both_classes()
    positives = np.sort(data.scores[data.labels])[::-1]
    needed = int(np.ceil(target_tpr * positives.size))
    needed = min(max(needed, 1), positives.size)
    return float(positives[needed - 1])

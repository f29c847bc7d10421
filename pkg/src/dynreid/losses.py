"""Batch-hard triplet loss and label-smoothed cross entropy."""

from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tensor, as_tensor
from .errors import LabelOutOfRange, NoNegative, NoPositive, ShapeMismatch


@dataclass
class LossConfig:
    margin: float = 0.3
    smoothing: float = 0.1
    num_classes: int = 0

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError("margin must be nonnegative")
        if not 0 <= self.smoothing < 1:
            raise ValueError("smoothing must lie in [0, 1)")


pairwise_euclidean = ops.pairwise_euclidean


def triplet_masks(labels):
    """Positive mask (same id, excluding self) and negative mask (different id)."""
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    pos = same & ~np.eye(len(labels), dtype=bool)
    return pos, ~same


def hard_triplet_loss(distmat, labels, margin=0.3):
    """Mean over anchors of ``max(0, margin + hardest_pos - hardest_neg)``."""
    distmat = as_tensor(distmat)
    labels = np.asarray(labels)
    n = len(labels)
    if distmat.shape != (n, n):
        raise ShapeMismatch(f"distance matrix {distmat.shape} for {n} labels")
    pos, neg = triplet_masks(labels)
    for a in range(n):
        if not pos[a].any():
            raise NoPositive(a)
        if not neg[a].any():
            raise NoNegative(a)
    hardest_pos = ops.masked_max(distmat, mask=pos)
    hardest_neg = ops.masked_min(distmat, mask=neg)
    gap = ops.add(ops.sub(hardest_pos, hardest_neg), Tensor(margin))
    return ops.mean(ops.relu(gap))


def smoothed_targets(labels, num_classes, eps):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelOutOfRange(f"labels must lie in [0, {num_classes})")
    q = np.full((len(labels), num_classes), eps / num_classes)
    q[np.arange(len(labels)), labels] += 1.0 - eps
    return q


def label_smooth_ce(logits, labels, eps=0.1):
    """Cross entropy against ``(1-eps)*onehot + eps/C``, averaged over the batch."""
    logits = as_tensor(logits)
    n, c = logits.shape
    q = smoothed_targets(labels, c, eps)
    logp = ops.log_softmax(logits)
    return ops.scale(ops.sum(ops.mul(logp, Tensor(q))), factor=-1.0 / n)

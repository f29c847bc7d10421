"""Retrieval metrics (CMC, mAP), flip-averaged features and distance fusion."""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .data import flip
from .errors import AllZeroWeights, NoValidQuery, ShapeMismatch


@dataclass
class EvalReport:
    mAP: float
    cmc: np.ndarray
    num_valid_queries: int
    extra: dict = field(default_factory=dict)

    def to_text(self, prefix=""):
        lines = [
            f"{prefix}mAP={self.mAP:.6f}",
            f"{prefix}num_valid_queries={self.num_valid_queries}",
        ]
        for k in (1, 5, 10):
            if k <= len(self.cmc):
                lines.append(f"{prefix}cmc{k}={self.cmc[k - 1]:.6f}")
        return "\n".join(lines) + "\n"

    def cmc_csv(self):
        rows = ["rank,cmc"] + [f"{r + 1},{v:.6f}" for r, v in enumerate(self.cmc)]
        return "\n".join(rows) + "\n"


def _prepare(distmat, q_ids, g_ids, q_cams, g_cams):
    distmat = np.ascontiguousarray(distmat, dtype=np.float64)
    arrays = [np.ascontiguousarray(a, dtype=np.int64) for a in (q_ids, g_ids, q_cams, g_cams)]
    if distmat.ndim != 2:
        raise ShapeMismatch("distance matrix must be 2-D")
    q, g = distmat.shape
    if arrays[0].shape != (q,) or arrays[2].shape != (q,) or arrays[1].shape != (g,) or arrays[3].shape != (g,):
        raise ShapeMismatch(f"id/camera vectors do not match a {q}x{g} matrix")
    return (distmat, *arrays)


def _rank(distmat, q_ids, g_ids, q_cams, g_cams, max_rank=None):
    args = _prepare(distmat, q_ids, g_ids, q_cams, g_cams)
    max_rank = args[0].shape[1] if max_rank is None else int(max_rank)
    first, ap = _kernels.rank_eval(*args, max_rank)
    valid = first >= 0
    if not valid.any():
        raise NoValidQuery("no query has a valid positive in the gallery")
    return first, ap, valid, max_rank


def compute_cmc(distmat, q_ids, g_ids, q_cams, g_cams, max_rank=None):
    """``cmc[k]``: share of valid queries whose first positive sits within rank ``k+1``."""
    first, _, valid, max_rank = _rank(distmat, q_ids, g_ids, q_cams, g_cams, max_rank)
    hits = np.zeros(max_rank, dtype=np.int64)
    for r in first[valid]:
        if r < max_rank:
            hits[r] += 1
    return np.cumsum(hits) / valid.sum()


def compute_map(distmat, q_ids, g_ids, q_cams, g_cams):
    _, ap, valid, _ = _rank(distmat, q_ids, g_ids, q_cams, g_cams)
    return float(np.cumsum(ap[valid])[-1] / valid.sum())


def evaluate(distmat, q_ids, g_ids, q_cams, g_cams, max_rank=None):
    first, ap, valid, max_rank = _rank(distmat, q_ids, g_ids, q_cams, g_cams, max_rank)
    hits = np.zeros(max_rank, dtype=np.int64)
    for r in first[valid]:
        if r < max_rank:
            hits[r] += 1
    n = int(valid.sum())
    return EvalReport(float(np.cumsum(ap[valid])[-1] / n), np.cumsum(hits) / n, n)


def flip_average_embed(embed, images):
    """Average ``embed(x)`` and ``embed(flip(x))``.

    ``embed`` maps a B,C,H,W array to an array or a dict of arrays (one per
    branch feature); the result mirrors that structure.
    """
    a = embed(images)
    b = embed(flip(images))
    if isinstance(a, dict):
        return {k: 0.5 * (a[k] + b[k]) for k in a}
    return 0.5 * (a + b)


def minmax_normalize(mat):
    mat = np.asarray(mat, dtype=np.float64)
    lo, hi = mat.min(), mat.max()
    if hi == lo:
        return np.zeros_like(mat)
    return (mat - lo) / (hi - lo)


def fuse_distances(mats, weights=None):
    """Weighted sum of min-max normalized matrices, weights renormalized to sum 1."""
    mats = [np.asarray(m, dtype=np.float64) for m in mats]
    if not mats:
        raise ValueError("no matrices to fuse")
    if any(m.shape != mats[0].shape for m in mats):
        raise ShapeMismatch("distance matrices to fuse differ in shape")
    weights = np.ones(len(mats)) if weights is None else np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(mats),) or np.any(weights < 0):
        raise ValueError("need one nonnegative weight per matrix")
    total = weights.sum()
    if total <= 0:
        raise AllZeroWeights("fusion weights sum to zero")
    out = np.zeros_like(mats[0])
    for m, w in zip(mats, weights / total):
        out += w * minmax_normalize(m)
    return out

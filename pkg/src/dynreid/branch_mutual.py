"""Mutual-guided dynamic branch.

Each image of a pair generates the kernel applied to the other one and the
pair distance is ``||K_i f_j - K_j f_i||``. The branch is trained with the
batch-hard triplet loss taken directly on that matrix; there is no ID
classifier here.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tensor, as_tensor
from .branch_self import ChannelCompressor, Controller
from .errors import ShapeMismatch
from .losses import hard_triplet_loss
from .nn import Module


@dataclass
class PairContext:
    i: int
    j: int
    f_i: np.ndarray
    f_j: np.ndarray
    k_i: np.ndarray
    k_j: np.ndarray


@dataclass
class MutualFeatures:
    """Compressed per-image feature ``f`` and the controller input ``x``."""

    f: Tensor
    x: Tensor

    def __post_init__(self):
        self.f = as_tensor(self.f)
        self.x = as_tensor(self.x)
        if self.f.shape[0] != self.x.shape[0]:
            raise ShapeMismatch(f"{self.f.shape[0]} features but {self.x.shape[0]} controller inputs")

    def __len__(self):
        return self.f.shape[0]


def mutual_pair_distance(ctx):
    f_i, f_j, k_i, k_j = (np.asarray(a, dtype=np.float64) for a in (ctx.f_i, ctx.f_j, ctx.k_i, ctx.k_j))
    c = f_i.shape[0]
    if f_j.shape != (c,) or k_i.shape != (c, c) or k_j.shape != (c, c):
        raise ShapeMismatch("pair context extents disagree")
    return float(ops.euclidean_distance(k_i @ f_j, k_j @ f_i).data)


class MutualBranch(Module):
    def __init__(self, in_c, branch_c, squeeze, rng):
        super().__init__()
        self.compress = self.child("compress", ChannelCompressor(in_c, branch_c, rng))
        self.controller = self.child("controller", Controller(in_c, squeeze, branch_c, rng))

    def features(self, featmap, mode="train", pooled=None):
        if pooled is None:
            pooled = ops.global_avg_pool(featmap)
        return MutualFeatures(ops.global_avg_pool(self.compress(featmap, mode)), pooled)


def mutual_distance_matrix(feats, ctrl):
    """N x N matrix: one controller pass per image, one evaluation per unordered pair."""
    return ops.mutual_distance_matrix(feats.f, ctrl(feats.x))


def cross_distance_matrix(query, gallery, ctrl):
    """Q x G matrix; kernels computed once per image and reused across pairs."""
    return ops.mutual_cross_distance(query.f, ctrl(query.x), gallery.f, ctrl(gallery.x))


def mutual_branch_loss(distmat, labels, margin=0.3):
    return hard_triplet_loss(distmat, labels, margin)

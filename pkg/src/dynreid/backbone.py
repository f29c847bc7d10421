"""Miniature convolutional backbone and the global branch."""

from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .errors import ShapeMismatch
from .losses import hard_triplet_loss, label_smooth_ce
from .nn import BatchNorm, ConvBNReLU, Linear, Module


@dataclass
class BackboneConfig:
    widths: tuple = (16, 32, 64)
    strides: tuple = (2, 2, 2)
    image_shape: tuple = (3, 32, 16)
    kernel: int = 3

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.strides = tuple(int(s) for s in self.strides)
        self.image_shape = tuple(int(s) for s in self.image_shape)
        if len(self.widths) != len(self.strides) or not self.widths:
            raise ValueError("widths and strides must be non-empty and of equal length")
        if any(s not in (1, 2) for s in self.strides):
            raise ValueError("every stride must be 1 or 2")

    @property
    def out_channels(self):
        return self.widths[-1]

    @property
    def reduction(self):
        return int(np.prod(self.strides))

    def output_shape(self):
        c, h, w = self.image_shape
        r = self.reduction
        return self.out_channels, h // r, w // r


class Backbone(Module):
    """Stack of conv -> batch norm -> ReLU stages."""

    def __init__(self, config, rng):
        super().__init__()
        self.config = config
        self.stages = []
        c_in = config.image_shape[0]
        for i, (w, s) in enumerate(zip(config.widths, config.strides)):
            self.stages.append(self.child(f"stage{i}", ConvBNReLU(rng, c_in, w, config.kernel, s)))
            c_in = w

    def __call__(self, images, mode="train"):
        _, _, h, w = images.shape
        r = self.config.reduction
        if h % r or w % r:
            raise ShapeMismatch(f"image {h}x{w} not divisible by total stride {r}")
        x = images
        for stage in self.stages:
            x = stage(x, mode)
        return x


class GlobalBranch(Module):
    """Pooled feature, batch-norm neck and a bias-free ID classifier."""

    def __init__(self, channels, num_ids, rng):
        super().__init__()
        self.neck = self.child("neck", BatchNorm(channels))
        self.classifier = self.child("classifier", Linear(rng, channels, num_ids, bias=False, std=0.01))

    def embed(self, featmap, mode="train", pooled=None):
        if pooled is None:
            pooled = ops.global_avg_pool(featmap)
        return self.neck(pooled, mode)


def global_loss(emb, logits, labels, margin=0.3, eps=0.1):
    """Triplet plus label-smoothed ID loss; returns ``(total, parts)``."""
    trip = hard_triplet_loss(ops.pairwise_euclidean(emb), labels, margin)
    ce = label_smooth_ce(logits, labels, eps)
    return ops.add(trip, ce), {"triplet": trip, "ce": ce}

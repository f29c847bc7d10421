"""Self-guided dynamic branch: each image generates the 1x1 kernel applied to itself."""

import numpy as np

from .autodiff import ops
from .backbone import global_loss
from .errors import ShapeMismatch
from .nn import ConvBNReLU, Linear, Module

dynamic_conv_1x1 = ops.dynamic_conv_1x1


class Controller(Module):
    """Three-layer MLP mapping a pooled feature to a normalized C x C kernel.

    Three affine steps ``C_o -> C_o/d -> C_o/d -> C*C``, each followed by
    ReLU, then unit Frobenius norm per image.
    """

    def __init__(self, in_dim, squeeze, kernel_dim, rng, eps=1e-12):
        super().__init__()
        if in_dim % squeeze:
            raise ValueError(f"squeeze {squeeze} does not divide {in_dim}")
        hidden = in_dim // squeeze
        self.in_dim = in_dim
        self.kernel_dim = kernel_dim
        self.eps = eps
        self.evaluations = 0
        self.fc1 = self.child("fc1", Linear(rng, in_dim, hidden))
        self.fc2 = self.child("fc2", Linear(rng, hidden, hidden))
        self.fc3 = self.child("fc3", Linear(rng, hidden, kernel_dim * kernel_dim))

    @property
    def extents(self):
        return [self.fc1.weight.shape[0], self.fc1.weight.shape[1], self.fc2.weight.shape[1], self.fc3.weight.shape[1]]

    def raw(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeMismatch(f"controller expects B,{self.in_dim}, got {x.shape}")
        h = ops.relu(self.fc1(x))
        h = ops.relu(self.fc2(h))
        return ops.relu(self.fc3(h))

    def __call__(self, x):
        self.evaluations += x.shape[0]
        k = ops.reshape(self.raw(x), shape=(x.shape[0], self.kernel_dim, self.kernel_dim))
        return ops.frobenius_normalize(k, eps=self.eps, batched=True)

    def force_identity(self):
        """Test fixture: zero final weights, bias = flattened identity."""
        self.fc3.weight.data[...] = 0.0
        self.fc3.bias.data[...] = np.eye(self.kernel_dim).reshape(-1)


class ChannelCompressor(Module):
    """Three 1x1 conv -> batch norm -> ReLU blocks ``C_o -> out_c``."""

    def __init__(self, in_c, out_c, rng):
        super().__init__()
        if out_c < 1:
            raise ValueError("out_c must be >= 1")
        self.out_c = out_c
        self.blocks = [
            self.child(f"block{i}", ConvBNReLU(rng, c, out_c, kernel=1, stride=1, pad=0))
            for i, c in enumerate((in_c, out_c, out_c))
        ]

    def __call__(self, featmap, mode="train"):
        x = featmap
        for block in self.blocks:
            x = block(x, mode)
        return x


class SelfBranch(Module):
    def __init__(self, in_c, branch_c, squeeze, num_ids, rng):
        super().__init__()
        self.compress = self.child("compress", ChannelCompressor(in_c, branch_c, rng))
        self.controller = self.child("controller", Controller(in_c, squeeze, branch_c, rng))
        self.classifier = self.child("classifier", Linear(rng, branch_c, num_ids, bias=False, std=0.01))

    def __call__(self, featmap, mode="train", pooled=None):
        if pooled is None:
            pooled = ops.global_avg_pool(featmap)
        kernels = self.controller(pooled)
        refined = dynamic_conv_1x1(self.compress(featmap, mode), kernels)
        return ops.global_avg_pool(refined)


def self_branch_loss(emb, logits, labels, margin=0.3, eps=0.1):
    return global_loss(emb, logits, labels, margin, eps)

"""Three-branch network: backbone, global branch, self- and mutual-guided branches."""

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tensor, no_grad
from .backbone import Backbone, GlobalBranch, global_loss
from .branch_mutual import MutualBranch, MutualFeatures, cross_distance_matrix, mutual_branch_loss, mutual_distance_matrix
from .branch_self import SelfBranch, self_branch_loss
from .config import BRANCHES
from .metrics import flip_average_embed
from .nn import Module

LOSS_COLUMNS = ("global_triplet", "global_ce", "self_triplet", "self_ce", "mutual_triplet")


def cross_euclidean(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.maximum(np.sum(diff * diff, axis=2), 0.0))


class DynReIDModel(Module):
    """All three branches are always built so parameter initialization does
    not depend on which ones are enabled; ``branches`` selects the ones that
    contribute to the loss and to fused retrieval."""

    def __init__(self, cfg, num_ids, image_shape=None, branches=None):
        super().__init__()
        rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.num_ids = num_ids
        self.branches = tuple(b for b in BRANCHES if b in (branches or cfg.branches))
        c_o = cfg.c_o
        self.backbone = self.child("backbone", Backbone(cfg.backbone_config(image_shape), rng))
        self.global_branch = self.child("global", GlobalBranch(c_o, num_ids, rng))
        self.self_branch = self.child("self", SelfBranch(c_o, cfg.c_self, cfg.squeeze, num_ids, rng))
        self.mutual_branch = self.child("mutual", MutualBranch(c_o, cfg.c_m, cfg.squeeze, rng))

    def losses(self, images, labels):
        """Train-mode forward; returns ``(total, {component: scalar Tensor})``."""
        cfg = self.cfg
        featmap = self.backbone(Tensor(images), "train")
        pooled = ops.global_avg_pool(featmap)
        parts = {}
        if "global" in self.branches:
            emb = self.global_branch.embed(featmap, "train", pooled)
            _, p = global_loss(emb, self.global_branch.classifier(emb), labels, cfg.margin, cfg.smoothing)
            parts["global_triplet"], parts["global_ce"] = p["triplet"], p["ce"]
        if "self" in self.branches:
            emb = self.self_branch(featmap, "train", pooled)
            _, p = self_branch_loss(emb, self.self_branch.classifier(emb), labels, cfg.margin, cfg.smoothing)
            parts["self_triplet"], parts["self_ce"] = p["triplet"], p["ce"]
        if "mutual" in self.branches:
            feats = self.mutual_branch.features(featmap, "train", pooled)
            dist = mutual_distance_matrix(feats, self.mutual_branch.controller)
            parts["mutual_triplet"] = mutual_branch_loss(dist, labels, cfg.margin)
        total = None
        for v in parts.values():
            total = v if total is None else ops.add(total, v)
        return total, parts

    def embed(self, images):
        """Eval-mode features for every branch as plain arrays."""
        with no_grad():
            featmap = self.backbone(Tensor(images), "eval")
            pooled = ops.global_avg_pool(featmap)
            feats = self.mutual_branch.features(featmap, "eval", pooled)
            return {
                "global_pre": pooled.data,
                "global": self.global_branch.embed(featmap, "eval", pooled).data,
                "self": self.self_branch(featmap, "eval", pooled).data,
                "mutual_f": feats.f.data,
                "mutual_x": feats.x.data,
            }

    def extract(self, images, batch_size=64, flip_average=True):
        chunks = []
        for s in range(0, len(images), batch_size):
            x = images[s:s + batch_size]
            chunks.append(flip_average_embed(self.embed, x) if flip_average else self.embed(x))
        return {k: np.concatenate([c[k] for c in chunks]) for k in chunks[0]}

    def distances(self, qf, gf):
        """Query x gallery matrices for every branch plus the pre-neck global feature."""
        with no_grad():
            mutual = cross_distance_matrix(
                MutualFeatures(qf["mutual_f"], qf["mutual_x"]),
                MutualFeatures(gf["mutual_f"], gf["mutual_x"]),
                self.mutual_branch.controller,
            ).data
        return {
            "global_pre": cross_euclidean(qf["global_pre"], gf["global_pre"]),
            "global": cross_euclidean(qf["global"], gf["global"]),
            "self": cross_euclidean(qf["self"], gf["self"]),
            "mutual": mutual,
        }

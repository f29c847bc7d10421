"""Finite-difference checks over every registered primitive and each full branch."""

from dataclasses import dataclass

import numpy as np

from .autodiff import REGISTRY, BNState, Tensor, grad_check, ops
from .backbone import Backbone, BackboneConfig, GlobalBranch, global_loss
from .branch_mutual import MutualBranch, mutual_branch_loss, mutual_distance_matrix
from .branch_self import SelfBranch, self_branch_loss
from .losses import hard_triplet_loss, label_smooth_ce

TOLERANCE = 1e-4
STEP = 1e-5

CHECKS = {}


def check(name):
    def wrap(fn):
        CHECKS[name] = fn
        return fn
    return wrap


@dataclass
class CheckResult:
    name: str
    seed: int
    max_rel_error: float
    passed: bool
    coords_checked: int = 0
    kinks_skipped: int = 0


def _project(out, rng):
    """Scalarize with a fixed random projection so no gradient is degenerate."""
    r = rng.uniform(0.5, 1.5, size=out.shape) * rng.choice([-1.0, 1.0], size=out.shape)
    return ops.sum(ops.mul(out, Tensor(r)))


def _away_from_zero(rng, shape):
    return rng.uniform(0.05, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _u(rng, *shape):
    return rng.uniform(-1.0, 1.0, size=shape)


def _elementwise(prim, rng, shape_a, shape_b):
    a, b = Tensor(_u(rng, *shape_a)), Tensor(_u(rng, *shape_b))
    return [
        ("a", lambda t: _project(prim(t, b), np.random.default_rng(1)), a),
        ("b", lambda t: _project(prim(a, t), np.random.default_rng(1)), b),
    ]


@check("add")
def _(rng):
    return _elementwise(ops.add, rng, (3, 4), (4,))


@check("sub")
def _(rng):
    return _elementwise(ops.sub, rng, (3, 4), (3, 1))


@check("mul")
def _(rng):
    return _elementwise(ops.mul, rng, (2, 3, 4), (3, 4))


@check("matmul")
def _(rng):
    return _elementwise(ops.matmul, rng, (4, 3), (3, 5))


@check("scale")
def _(rng):
    return [("x", lambda t: _project(ops.scale(t, factor=-2.5), np.random.default_rng(1)), Tensor(_u(rng, 3, 3)))]


@check("relu")
def _(rng):
    return [("x", lambda t: _project(ops.relu(t), np.random.default_rng(1)), Tensor(_away_from_zero(rng, (4, 5))))]


@check("sum")
def _(rng):
    x = Tensor(_u(rng, 3, 4, 2))
    return [
        ("axis=None", lambda t: ops.scale(ops.sum(t), factor=0.7), x),
        ("axis=1", lambda t: _project(ops.sum(t, axis=1), np.random.default_rng(1)), x),
    ]


@check("mean")
def _(rng):
    x = Tensor(_u(rng, 3, 4))
    return [
        ("axis=None", lambda t: ops.scale(ops.mean(t), factor=1.3), x),
        ("axis=0", lambda t: _project(ops.mean(t, axis=0), np.random.default_rng(1)), x),
    ]


@check("reshape")
def _(rng):
    return [("x", lambda t: _project(ops.reshape(t, shape=(6, 2)), np.random.default_rng(1)), Tensor(_u(rng, 3, 4)))]


@check("conv2d")
def _(rng):
    x, w = Tensor(_u(rng, 2, 3, 5, 4)), Tensor(_u(rng, 4, 3, 3, 3))
    x1, w1 = Tensor(_u(rng, 2, 2, 4, 4)), Tensor(_u(rng, 3, 2, 2, 2))
    return [
        ("x s2p1", lambda t: _project(ops.conv2d(t, w, stride=2, pad=1), np.random.default_rng(1)), x),
        ("w s2p1", lambda t: _project(ops.conv2d(x, t, stride=2, pad=1), np.random.default_rng(1)), w),
        ("x s1p0", lambda t: _project(ops.conv2d(t, w1, stride=1, pad=0), np.random.default_rng(2)), x1),
        ("w s1p0", lambda t: _project(ops.conv2d(x1, t, stride=1, pad=0), np.random.default_rng(2)), w1),
    ]


@check("batch_norm")
def _(rng):
    x = Tensor(_u(rng, 4, 3, 2, 2))
    x2 = Tensor(_u(rng, 5, 3))
    gamma, beta = Tensor(rng.uniform(0.5, 1.5, 3)), Tensor(_u(rng, 3))
    ev = BNState(3)
    ev.running_mean = _u(rng, 3)
    ev.running_var = rng.uniform(0.5, 2.0, 3)

    def bn(xx, g, b, mode="train", state=None):
        return _project(ops.batch_norm(xx, g, b, state=state or BNState(3), mode=mode), np.random.default_rng(1))

    return [
        ("x train 4d", lambda t: bn(t, gamma, beta), x),
        ("x train 2d", lambda t: bn(t, gamma, beta), x2),
        ("gamma train", lambda t: bn(x, t, beta), gamma),
        ("beta train", lambda t: bn(x, gamma, t), beta),
        ("x eval", lambda t: bn(t, gamma, beta, "eval", ev), x),
        ("gamma eval", lambda t: bn(x, t, beta, "eval", ev), gamma),
    ]


@check("global_avg_pool")
def _(rng):
    return [("x", lambda t: _project(ops.global_avg_pool(t), np.random.default_rng(1)), Tensor(_u(rng, 2, 3, 4, 2)))]


@check("log_softmax")
def _(rng):
    return [("x", lambda t: _project(ops.log_softmax(t), np.random.default_rng(1)), Tensor(3 * _u(rng, 4, 5)))]


@check("frobenius_normalize")
def _(rng):
    return [
        ("single", lambda t: _project(ops.frobenius_normalize(t), np.random.default_rng(1)), Tensor(_u(rng, 4, 4))),
        ("batched", lambda t: _project(ops.frobenius_normalize(t, batched=True), np.random.default_rng(1)),
         Tensor(_u(rng, 3, 4, 4))),
    ]


@check("euclidean_distance")
def _(rng):
    return _elementwise(ops.euclidean_distance, rng, (6,), (6,))


@check("pairwise_euclidean")
def _(rng):
    return [("x", lambda t: _project(ops.pairwise_euclidean(t), np.random.default_rng(1)), Tensor(_u(rng, 5, 3)))]


@check("dynamic_conv_1x1")
def _(rng):
    f, k = Tensor(_u(rng, 2, 3, 2, 2)), Tensor(_u(rng, 2, 3, 3))
    e = Tensor(_u(rng, 2, 3))
    return [
        ("featmap", lambda t: _project(ops.dynamic_conv_1x1(t, k), np.random.default_rng(1)), f),
        ("kernel", lambda t: _project(ops.dynamic_conv_1x1(f, t), np.random.default_rng(1)), k),
        ("embedding", lambda t: _project(ops.dynamic_conv_1x1(t, k), np.random.default_rng(1)), e),
    ]


@check("mutual_distance_matrix")
def _(rng):
    f, k = Tensor(_u(rng, 4, 3)), Tensor(_u(rng, 4, 3, 3))
    return [
        ("features", lambda t: _project(ops.mutual_distance_matrix(t, k), np.random.default_rng(1)), f),
        ("kernels", lambda t: _project(ops.mutual_distance_matrix(f, t), np.random.default_rng(1)), k),
    ]


@check("mutual_cross_distance")
def _(rng):
    fq, kq = Tensor(_u(rng, 2, 3)), Tensor(_u(rng, 2, 3, 3))
    fg, kg = Tensor(_u(rng, 3, 3)), Tensor(_u(rng, 3, 3, 3))

    def d(a, b, c, e):
        return _project(ops.mutual_cross_distance(a, b, c, e), np.random.default_rng(1))

    return [
        ("query f", lambda t: d(t, kq, fg, kg), fq),
        ("query k", lambda t: d(fq, t, fg, kg), kq),
        ("gallery f", lambda t: d(fq, kq, t, kg), fg),
        ("gallery k", lambda t: d(fq, kq, fg, t), kg),
    ]


@check("masked_max")
def _(rng):
    mask = rng.random((4, 5)) < 0.6
    mask[:, 0] = True
    return [("x", lambda t: _project(ops.masked_max(t, mask=mask), np.random.default_rng(1)), Tensor(_u(rng, 4, 5)))]


@check("masked_min")
def _(rng):
    mask = rng.random((4, 5)) < 0.6
    mask[:, -1] = True
    return [("x", lambda t: _project(ops.masked_min(t, mask=mask), np.random.default_rng(1)), Tensor(_u(rng, 4, 5)))]


# ------------------------------------------------------------------ composite losses

LABELS = np.array([0, 0, 1, 1])
LABELS8 = np.array([0, 0, 1, 1, 2, 2, 3, 3])


@check("loss:hard_triplet")
def _(rng):
    x = Tensor(_u(rng, 4, 3))
    return [("embedding", lambda t: hard_triplet_loss(ops.pairwise_euclidean(t), LABELS, 0.3), x)]


@check("loss:label_smooth_ce")
def _(rng):
    x = Tensor(2 * _u(rng, 4, 3))
    return [("logits", lambda t: label_smooth_ce(t, LABELS, 0.1), x)]


# ------------------------------------------------------------------ full branches

def _jitter_offsets(module, rng, keep=()):
    # zero-initialized offsets park ReLUs exactly on their kink
    for name, t in module.named_parameters():
        if name.endswith(("bias", "beta")) and name not in keep:
            t.data = rng.uniform(-0.5, 0.5, size=t.shape)


def _param_checks(module, loss_fn):
    return [(name, lambda t, fn=loss_fn: fn(), t) for name, t in module.named_parameters()]


@check("branch:global")
def _(rng):
    # 16 cells x 8 images: with fewer, equal per-image ReLU counts are common
    # and the pooled batch norm then cancels a bias exactly, leaving finite
    # differences to compare rounding noise against a true zero
    cfg = BackboneConfig((3, 4), (2, 2), (3, 16, 16))
    backbone = Backbone(cfg, rng)
    head = GlobalBranch(4, 4, rng)
    head.classifier.weight.data = _u(rng, 4, 4)
    # a large final-stage beta keeps a channel fully active, and the pooled
    # batch norm then cancels it exactly
    _jitter_offsets(backbone, rng, keep=("stage1.norm.beta",))
    _jitter_offsets(head, rng)
    images = Tensor(rng.uniform(0, 1, (8, 3, 16, 16)))

    def loss(img=None):
        fm = backbone(images if img is None else img, "train")
        emb = head.embed(fm, "train")
        return global_loss(emb, head.classifier(emb), LABELS8)[0]

    coords = rng.choice(images.data.size, size=96, replace=False)
    checks = [("images", lambda t: loss(t), images, coords)]
    checks += _param_checks(backbone, loss)
    checks += _param_checks(head, loss)
    return checks


@check("branch:self")
def _(rng):
    branch = SelfBranch(4, 3, 1, 2, rng)
    branch.classifier.weight.data = _u(rng, 3, 2)
    _jitter_offsets(branch, rng)
    featmap = Tensor(_u(rng, 4, 4, 2, 2))

    def loss(fm=None):
        emb = branch(featmap if fm is None else fm, "train")
        return self_branch_loss(emb, branch.classifier(emb), LABELS)[0]

    return [("featmap", lambda t: loss(t), featmap)] + _param_checks(branch, loss)


@check("branch:mutual")
def _(rng):
    branch = MutualBranch(4, 3, 1, rng)
    _jitter_offsets(branch, rng)
    featmap = Tensor(_u(rng, 4, 4, 2, 2))

    def loss(fm=None):
        feats = branch.features(featmap if fm is None else fm, "train")
        return mutual_branch_loss(mutual_distance_matrix(feats, branch.controller), LABELS, 0.3)

    return [("featmap", lambda t: loss(t), featmap)] + _param_checks(branch, loss)


def primitive_names():
    return sorted(REGISTRY)


def run_check(name, seed, tol=TOLERANCE, step=STEP):
    rng = np.random.default_rng([seed, sum(map(ord, name))])
    worst = 0.0
    checked = skipped = 0
    for _, f, x, *coords in CHECKS[name](rng):
        rep = grad_check(f, x, step, *coords)
        worst = max(worst, rep.max_rel_error)
        checked += rep.coords_checked
        skipped += rep.kinks_skipped
    return CheckResult(name, seed, worst, bool(worst < tol), checked, skipped)


def run_suite(seeds=(0,), tol=TOLERANCE, names=None):
    names = list(CHECKS) if names is None else names
    return [run_check(n, s, tol) for n in names for s in seeds]

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynreid.autodiff import Tape, Tensor, no_grad, ops
from dynreid.backbone import Backbone, BackboneConfig, GlobalBranch, global_loss
from dynreid.branch_mutual import (
    MutualBranch,
    MutualFeatures,
    PairContext,
    cross_distance_matrix,
    mutual_branch_loss,
    mutual_distance_matrix,
    mutual_pair_distance,
)
from dynreid.branch_self import ChannelCompressor, Controller, SelfBranch, dynamic_conv_1x1
from dynreid.errors import BatchTooSmall, KernelCountMismatch, ShapeMismatch
from dynreid.losses import hard_triplet_loss, label_smooth_ce

from oracles import hard_triplet_enum, mutual_pair


def fresh(seed=0):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------- backbone / global

def test_backbone_desk_shape():
    bb = Backbone(BackboneConfig(), fresh())
    out = bb(Tensor(fresh(1).uniform(0, 1, (2, 3, 32, 16))), "train")
    assert out.shape == (2, 64, 4, 2)


def test_backbone_indivisible():
    bb = Backbone(BackboneConfig(image_shape=(3, 30, 16)), fresh())
    with pytest.raises(ShapeMismatch):
        bb(Tensor(np.zeros((2, 3, 30, 16))), "train")


def test_backbone_zero_weights_gives_beta():
    bb = Backbone(BackboneConfig(), fresh())
    for name, t in bb.named_parameters():
        t.data[...] = 0.0
        if name.endswith("beta"):
            t.data[...] = 0.25
    out = bb(Tensor(fresh(1).uniform(0, 1, (2, 3, 32, 16))), "train").data
    assert np.all(out == 0.25)


def test_backbone_deterministic():
    x = Tensor(fresh(1).uniform(0, 1, (3, 3, 32, 16)))
    a = Backbone(BackboneConfig(), fresh(5))(x, "train").data
    b = Backbone(BackboneConfig(), fresh(5))(x, "train").data
    assert np.array_equal(a, b)


def test_global_embed_constant_eval():
    gb = GlobalBranch(4, 3, fresh())
    emb = gb.embed(Tensor(np.full((2, 4, 2, 2), 0.5)), "eval").data
    np.testing.assert_allclose(emb, 0.5 / np.sqrt(1 + 1e-5))


def test_global_embed_train_stats():
    gb = GlobalBranch(6, 3, fresh())
    emb = gb.embed(Tensor(fresh(2).uniform(0, 20, (8, 6, 2, 2))), "train").data
    assert emb.shape == (8, 6)
    assert np.max(np.abs(emb.mean(0))) < 1e-6 and np.max(np.abs(emb.var(0) - 1)) < 1e-4


def test_global_embed_permutation_equivariant():
    bb = Backbone(BackboneConfig(widths=(4, 8), strides=(2, 2), image_shape=(3, 8, 8)), fresh())
    gb = GlobalBranch(8, 3, fresh(1))
    bb(Tensor(fresh(3).uniform(0, 1, (4, 3, 8, 8))), "train")  # move running stats off the defaults
    x = fresh(4).uniform(0, 1, (5, 3, 8, 8))
    perm = np.array([3, 0, 4, 1, 2])
    e = gb.embed(bb(Tensor(x), "eval"), "eval").data
    ep = gb.embed(bb(Tensor(x[perm]), "eval"), "eval").data
    assert np.allclose(e[perm], ep, rtol=0, atol=1e-13)


def test_global_loss_components():
    rng = fresh(3)
    emb = Tensor(rng.uniform(-1, 1, (6, 4)))
    logits = Tensor(rng.uniform(-1, 1, (6, 3)))
    labels = np.array([0, 0, 1, 1, 2, 2])
    total, parts = global_loss(emb, logits, labels, 0.3, 0.1)
    assert total.data == parts["triplet"].data + parts["ce"].data
    d = ops.pairwise_euclidean(emb).data
    assert abs(parts["triplet"].data - hard_triplet_enum(d, labels, 0.3)) < 1e-12
    assert parts["ce"].data == label_smooth_ce(logits, labels, 0.1).data


def test_global_loss_floor_when_separated():
    emb = np.array([[0, 0], [0, 0], [5, 0], [5, 0]], dtype=float)
    logits = np.array([[50, 0], [50, 0], [0, 50], [0, 50]], dtype=float)
    total, parts = global_loss(Tensor(emb), Tensor(logits), [0, 0, 1, 1], 0.3, 0.1)
    assert parts["triplet"].data == 0
    # smoothing floor: the eps/C mass on the wrong class costs about 0.05 * 50
    assert abs(total.data - 0.05 * 50) < 1e-6


# ---------------------------------------------------------------- controller / dynamic conv

def test_controller_desk_extents():
    c = Controller(64, 4, 32, fresh())
    assert c.extents == [64, 16, 16, 1024]
    k = c(Tensor(fresh(1).uniform(-1, 1, (3, 64))))
    assert k.shape == (3, 32, 32)


def test_controller_zero_input_zero_kernel():
    c = Controller(8, 2, 3, fresh())
    assert not c(Tensor(np.zeros((2, 8)))).data.any()


def test_controller_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        Controller(8, 2, 3, fresh())(Tensor(np.zeros((2, 7))))


def test_controller_instance_specific():
    rng = fresh(9)
    c = Controller(64, 4, 32, rng)
    for layer in (c.fc1, c.fc2, c.fc3):
        layer.bias.data[...] = rng.uniform(-0.1, 0.1, layer.bias.shape)
    for _ in range(100):
        x = rng.uniform(-1, 1, (1, 64))
        y = x.copy()
        y[0, rng.integers(64)] += rng.uniform(0.05, 0.5)
        assert np.linalg.norm(c(Tensor(x)).data - c(Tensor(y)).data) > 0


def test_controller_scale_invariant():
    c = Controller(16, 2, 4, fresh())
    x = Tensor(fresh(2).uniform(-1, 1, (4, 16)))
    base = c(x).data
    c.fc3.weight.data *= 3.7
    c.fc3.bias.data *= 3.7
    assert np.max(np.abs(c(x).data - base)) < 1e-8


def test_identity_fixture_kernel():
    c = Controller(8, 2, 3, fresh())
    c.force_identity()
    k = c(Tensor(fresh(1).uniform(-1, 1, (2, 8)))).data
    np.testing.assert_allclose(k, np.broadcast_to(np.eye(3) / np.sqrt(3), (2, 3, 3)), atol=1e-15)


def test_dynconv_identity_and_scaled(rng):
    f = rng.uniform(-1, 1, (2, 3, 4, 2))
    eye = np.broadcast_to(np.eye(3), (2, 3, 3))
    assert np.array_equal(dynamic_conv_1x1(f, eye).data, f)
    np.testing.assert_allclose(dynamic_conv_1x1(f, 2.5 * eye).data, 2.5 * f, rtol=1e-15)


def test_dynconv_per_image_oracle(rng):
    f = rng.uniform(-1, 1, (2, 3, 2, 2))
    k = rng.uniform(-1, 1, (2, 3, 3))
    out = dynamic_conv_1x1(f, k).data
    for b in range(2):
        for y in range(2):
            for x in range(2):
                np.testing.assert_allclose(out[b, :, y, x], k[b] @ f[b, :, y, x], atol=1e-15)
    emb = rng.uniform(-1, 1, (2, 3))
    np.testing.assert_allclose(dynamic_conv_1x1(emb, k).data, np.einsum("bij,bj->bi", k, emb), atol=1e-15)


def test_dynconv_errors():
    with pytest.raises(KernelCountMismatch):
        dynamic_conv_1x1(np.zeros((3, 2)), np.zeros((2, 2, 2)))
    with pytest.raises(ShapeMismatch):
        dynamic_conv_1x1(np.zeros((2, 3)), np.zeros((2, 2, 2)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3, width=64), st.floats(-3, 3, width=64))
def test_dynconv_linear_in_f(seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(-1, 1, (2, 2, 4, 1, 3))
    k = rng.uniform(-1, 1, (2, 4, 4))
    lhs = dynamic_conv_1x1(a * x + b * y, k).data
    rhs = a * dynamic_conv_1x1(x, k).data + b * dynamic_conv_1x1(y, k).data
    assert np.max(np.abs(lhs - rhs)) < 1e-10


# ---------------------------------------------------------------- self branch

def test_compressor_shape():
    comp = ChannelCompressor(64, 32, fresh())
    assert comp(Tensor(fresh(1).uniform(0, 1, (2, 64, 4, 2))), "train").shape == (2, 32, 4, 2)


def test_self_branch_shape_and_identity_fixture():
    br = SelfBranch(64, 32, 4, 8, fresh())
    fm = Tensor(fresh(1).uniform(0, 1, (3, 64, 4, 2)))
    assert br(fm, "train").shape == (3, 32)
    br.controller.force_identity()
    emb = br(fm, "eval").data
    pooled = ops.global_avg_pool(br.compress(fm, "eval")).data
    np.testing.assert_allclose(emb, pooled / np.sqrt(32), atol=1e-14)


# ---------------------------------------------------------------- mutual branch

def test_pair_distance_cases(rng):
    f_i, f_j = rng.uniform(-1, 1, (2, 4))
    eye = np.eye(4)
    assert abs(mutual_pair_distance(PairContext(0, 1, f_i, f_j, eye, eye)) - np.linalg.norm(f_j - f_i)) < 1e-15
    k = rng.uniform(-1, 1, (4, 4))
    assert mutual_pair_distance(PairContext(0, 1, f_i, f_i, k, k)) == 0
    k2 = rng.uniform(-1, 1, (4, 4))
    assert abs(mutual_pair_distance(PairContext(0, 1, f_i, f_j, k, k2)) - mutual_pair(f_i, f_j, k, k2)) < 1e-14


def test_mutual_features_shape():
    br = MutualBranch(64, 16, 4, fresh())
    feats = br.features(Tensor(fresh(1).uniform(0, 1, (3, 64, 4, 2))), "train")
    assert feats.f.shape == (3, 16) and feats.x.shape == (3, 64) and len(feats) == 3


def test_mutual_matrix_cases(kernel_path):
    ctrl = Controller(6, 2, 3, fresh())
    same = MutualFeatures(np.ones((2, 3)), np.ones((2, 6)))
    assert not mutual_distance_matrix(same, ctrl).data.any()
    with pytest.raises(BatchTooSmall):
        mutual_distance_matrix(MutualFeatures(np.ones((1, 3)), np.ones((1, 6))), ctrl)


def test_mutual_matrix_matches_oracle(kernel_path):
    rng = fresh(4)
    ctrl = Controller(6, 2, 3, rng)
    feats = MutualFeatures(rng.uniform(-1, 1, (4, 3)), rng.uniform(-1, 1, (4, 6)))
    d = mutual_distance_matrix(feats, ctrl).data
    k = ctrl(feats.x).data
    f = feats.f.data
    for i in range(4):
        for j in range(4):
            assert abs(d[i, j] - (0.0 if i == j else mutual_pair(f[i], f[j], k[i], k[j]))) < 1e-12


def test_cross_matrix_consistency_and_cost(kernel_path):
    rng = fresh(5)
    ctrl = Controller(6, 2, 3, rng)
    q = MutualFeatures(rng.uniform(-1, 1, (3, 3)), rng.uniform(-1, 1, (3, 6)))
    g = MutualFeatures(rng.uniform(-1, 1, (5, 3)), rng.uniform(-1, 1, (5, 6)))
    before = ctrl.evaluations
    d = cross_distance_matrix(q, g, ctrl).data
    assert ctrl.evaluations - before == 3 + 5 and d.shape == (3, 5)
    kq, kg = ctrl(q.x).data, ctrl(g.x).data
    for i in range(3):
        for j in range(5):
            # kernel reuse equals per-pair recomputation
            per_pair = mutual_pair(q.f.data[i], g.f.data[j], kq[i], kg[j])
            assert abs(d[i, j] - per_pair) < 1e-12
    self_d = mutual_distance_matrix(q, ctrl).data
    np.testing.assert_allclose(cross_distance_matrix(q, q, ctrl).data, self_d, rtol=0, atol=1e-14)
    one = cross_distance_matrix(MutualFeatures(q.f.data[:1], q.x.data[:1]),
                                MutualFeatures(g.f.data[:1], g.x.data[:1]), ctrl).data
    assert one.shape == (1, 1) and abs(one[0, 0] - d[0, 0]) < 1e-15


def test_mutual_loss_cases():
    labels = [0, 0, 1, 1]
    d = np.array([[0, 0, 1, 1], [0, 0, 1, 1], [1, 1, 0, 0], [1, 1, 0, 0]], dtype=float)
    assert mutual_branch_loss(d, labels, 0.3).data == 0
    d2 = d.copy()
    d2[0, 1] = d2[1, 0] = 0.9  # one violation for anchors 0 and 1
    d2[0, 2] = d2[2, 0] = 0.8
    expected = hard_triplet_enum(d2, labels, 0.3)
    assert abs(mutual_branch_loss(d2, labels, 0.3).data - expected) < 1e-15
    assert mutual_branch_loss(d2, labels, 0.3).data >= 0


def test_mutual_loss_grad_reaches_controller():
    rng = fresh(6)
    br = MutualBranch(4, 3, 1, rng)
    fm = Tensor(rng.uniform(-1, 1, (4, 4, 2, 2)))
    with Tape() as tape:
        feats = br.features(fm, "train")
        loss = mutual_branch_loss(mutual_distance_matrix(feats, br.controller), [0, 0, 1, 1], 5.0)
    tape.backward(loss)
    assert br.controller.fc1.weight.grad is not None and np.any(br.controller.fc1.weight.grad)

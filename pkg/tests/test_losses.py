import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dynreid.autodiff import Tape, Tensor, grad_check
from dynreid.errors import LabelOutOfRange, NoNegative, NoPositive
from dynreid.losses import LossConfig, hard_triplet_loss, label_smooth_ce

from oracles import cross_entropy, hard_triplet_enum, smoothed_ce


def random_pk(rng, P, K):
    labels = np.repeat(np.arange(P), K)
    x = rng.uniform(0, 3, (P * K, P * K))
    return (x + x.T) * (1 - np.eye(P * K)) / 2, labels


def test_triplet_zero_when_separated():
    labels = np.array([0, 0, 1, 1])
    d = np.array([[0, 0, 1, 1], [0, 0, 1, 1], [1, 1, 0, 0], [1, 1, 0, 0]], dtype=float)
    assert hard_triplet_loss(d, labels, 0.3).data == 0.0


def test_triplet_hand_anchor_term():
    labels = np.array([0, 0, 1, 1])
    d = np.zeros((4, 4))
    d[0] = [0, 2.0, 1.5, 1.8]  # anchor 0: hardest pos 2.0, hardest neg 1.5
    # remaining anchors satisfied by a wide margin
    d[1] = [2.0, 0, 5, 5]
    d[2] = [1.5, 5, 0, 0.1]
    d[3] = [1.8, 5, 0.1, 0]
    loss = hard_triplet_loss(d, labels, 0.3).data
    assert abs(loss - 0.8 / 4) < 1e-15
    assert abs(loss - hard_triplet_enum(d, labels, 0.3)) < 1e-15


@pytest.mark.parametrize("P,K", [(2, 2), (3, 2), (4, 4), (2, 3)])
def test_triplet_matches_enumeration(rng, P, K):
    for _ in range(10):
        d, labels = random_pk(rng, P, K)
        assert abs(hard_triplet_loss(d, labels, 0.3).data - hard_triplet_enum(d, labels, 0.3)) < 1e-12


def test_triplet_homogeneous_at_zero_margin(rng):
    d, labels = random_pk(rng, 3, 3)
    base = hard_triplet_loss(d, labels, 0.0).data
    assert hard_triplet_loss(2.5 * d, labels, 0.0).data == pytest.approx(2.5 * base, rel=1e-15)


def test_triplet_errors_name_anchor():
    with pytest.raises(NoPositive) as e:
        hard_triplet_loss(np.ones((3, 3)), [0, 0, 1])
    assert "2" in str(e.value)
    with pytest.raises(NoNegative):
        hard_triplet_loss(np.ones((2, 2)), [0, 0])


def test_triplet_gradcheck(rng):
    d, labels = random_pk(rng, 2, 3)
    x = Tensor(d, requires_grad=True)
    assert grad_check(lambda t: hard_triplet_loss(t, labels, 0.3), x).passed()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 2, width=64))
def test_triplet_nonneg_and_zero_iff_satisfied(seed, margin):
    d, labels = random_pk(np.random.default_rng(seed), 3, 2)
    loss = hard_triplet_loss(d, labels, margin).data
    pos = (labels[:, None] == labels[None]) & ~np.eye(6, dtype=bool)
    hp = np.where(pos, d, -np.inf).max(1)
    hn = np.where(~(labels[:, None] == labels[None]), d, np.inf).min(1)
    assert loss >= 0
    assert (loss == 0) == bool(np.all(margin + hp <= hn))


# ---------------------------------------------------------------- label smoothing

def test_ce_eps0_matches_plain(rng):
    for _ in range(20):
        logits = rng.uniform(-5, 5, (6, 4))
        labels = rng.integers(0, 4, 6)
        assert abs(label_smooth_ce(logits, labels, 0.0).data - cross_entropy(logits.tolist(), labels)) < 1e-10


def test_ce_extreme_logits_vanish():
    logits = np.array([[200.0, 0.0, 0.0], [0.0, 0.0, 200.0]])
    assert label_smooth_ce(logits, [0, 2], 0.0).data < 1e-80


@pytest.mark.parametrize("eps", [0.0, 0.1, 0.5, 0.9])
def test_ce_uniform_logits_is_log_c(eps):
    for c in (2, 5, 17):
        assert abs(label_smooth_ce(np.full((3, c), 0.7), [0, 1, 1], eps).data - math.log(c)) < 1e-12


def test_ce_hand_formula():
    # N=1, C=3, logits (2,0,0), label 0, eps 0.1
    lse = math.log(math.exp(2) + 2)
    q = (0.9 + 0.1 / 3, 0.1 / 3, 0.1 / 3)
    expect = -(q[0] * (2 - lse) + q[1] * (0 - lse) + q[2] * (0 - lse))
    assert abs(label_smooth_ce(np.array([[2.0, 0.0, 0.0]]), [0], 0.1).data - expect) < 1e-14


def test_ce_matches_smoothed_oracle(rng):
    logits = rng.uniform(-3, 3, (5, 6))
    labels = rng.integers(0, 6, 5)
    assert abs(label_smooth_ce(logits, labels, 0.1).data - smoothed_ce(logits.tolist(), labels, 0.1)) < 1e-12


def test_ce_label_out_of_range():
    with pytest.raises(LabelOutOfRange):
        label_smooth_ce(np.zeros((2, 3)), [0, 3])


def test_ce_gradcheck(rng):
    x = Tensor(rng.uniform(-1, 1, (4, 5)), requires_grad=True)
    assert grad_check(lambda t: label_smooth_ce(t, [0, 1, 4, 2], 0.1), x).passed()


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-20, 20, width=64)), st.floats(-100, 100, width=64))
def test_ce_shift_invariant(logits, c):
    a = label_smooth_ce(logits, [0, 3, 1], 0.1).data
    b = label_smooth_ce(logits + c, [0, 3, 1], 0.1).data
    assert abs(a - b) < 1e-10


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(margin=-1)
    with pytest.raises(ValueError):
        LossConfig(smoothing=1.0)

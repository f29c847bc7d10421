"""Differentiable primitives.

Every primitive is a forward function over raw arrays returning
``(output, ctx)`` plus a backward rule ``(ctx, grad_out) -> grads`` with
one entry per positional tensor argument. Keyword arguments are treated
as constants. All primitives land in ``REGISTRY`` so the gradient checker
can enumerate them.
"""

import numpy as np

from .. import _kernels
from ..errors import BatchTooSmall, DegenerateOutput, KernelCountMismatch, ShapeMismatch
from .tensor import Tensor, active_tape, as_tensor

REGISTRY = {}

# While a list, non-smooth primitives append their branch decisions here so
# the gradient checker can tell when a finite-difference stencil crosses a kink.
_kink_trace = None


class trace_kinks:
    def __enter__(self):
        global _kink_trace
        self._saved = _kink_trace
        _kink_trace = []
        return _kink_trace

    def __exit__(self, *exc):
        global _kink_trace
        _kink_trace = self._saved
        return False


def _note_kink(decision):
    if _kink_trace is not None:
        _kink_trace.append(decision)


class Primitive:
    def __init__(self, name, forward):
        self.name = name
        self.forward = forward
        self.backward = None

    def defvjp(self, fn):
        self.backward = fn
        return fn

    def __call__(self, *args, **kwargs):
        inputs = tuple(as_tensor(a) for a in args)
        out, ctx = self.forward(*(t.data for t in inputs), **kwargs)
        result = Tensor(out)
        tape = active_tape()
        if tape is not None and any(t.requires_grad for t in inputs):
            tape.record(self, inputs, result, ctx)
        return result

    def __repr__(self):
        return f"<primitive {self.name}>"


def primitive(name):
    def wrap(forward):
        prim = Primitive(name, forward)
        REGISTRY[name] = prim
        return prim
    return wrap


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

@primitive("add")
def add(a, b):
    return a + b, (a.shape, b.shape)


@add.defvjp
def _add_vjp(ctx, g):
    sa, sb = ctx
    return _unbroadcast(g, sa), _unbroadcast(g, sb)


@primitive("sub")
def sub(a, b):
    return a - b, (a.shape, b.shape)


@sub.defvjp
def _sub_vjp(ctx, g):
    sa, sb = ctx
    return _unbroadcast(g, sa), _unbroadcast(-g, sb)


@primitive("mul")
def mul(a, b):
    return a * b, (a, b)


@mul.defvjp
def _mul_vjp(ctx, g):
    a, b = ctx
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


@primitive("scale")
def scale(x, factor=1.0):
    return x * factor, factor


@scale.defvjp
def _scale_vjp(factor, g):
    return (g * factor,)


@primitive("relu")
def relu(x):
    mask = x > 0
    _note_kink(mask)
    return np.where(mask, x, 0.0), mask


@relu.defvjp
def _relu_vjp(mask, g):
    # subgradient at 0 is 0
    return (g * mask,)


# ---------------------------------------------------------------- reductions / shape

@primitive("sum")
def sum(x, axis=None):  # noqa: A001
    return np.sum(x, axis=axis), (x.shape, axis)


@sum.defvjp
def _sum_vjp(ctx, g):
    shape, axis = ctx
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, shape).copy(),)


@primitive("mean")
def mean(x, axis=None):
    n = x.size if axis is None else x.shape[axis]
    return np.mean(x, axis=axis), (x.shape, axis, n)


@mean.defvjp
def _mean_vjp(ctx, g):
    shape, axis, n = ctx
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g / n, shape).copy(),)


@primitive("reshape")
def reshape(x, shape=None):
    return x.reshape(shape), x.shape


@reshape.defvjp
def _reshape_vjp(shape, g):
    return (g.reshape(shape),)


# ---------------------------------------------------------------- linear algebra

@primitive("matmul")
def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b, (a, b)


@matmul.defvjp
def _matmul_vjp(ctx, g):
    a, b = ctx
    return g @ b.T, a.T @ g


@primitive("conv2d")
def conv2d(x, w, stride=1, pad=0):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatch(f"conv2d expects 4-D input and weight, got {x.shape}, {w.shape}")
    b, c, h, wd = x.shape
    o, cw, kh, kw = w.shape
    if c != cw:
        raise ShapeMismatch(f"conv2d: input has {c} channels, weight expects {cw}")
    if stride < 1 or pad < 0:
        raise ValueError("stride must be >= 1 and pad >= 0")
    hp, wp = h + 2 * pad, wd + 2 * pad
    oh = (hp - kh) // stride + 1 if hp >= kh else 0
    ow = (wp - kw) // stride + 1 if wp >= kw else 0
    if oh < 1 or ow < 1:
        raise DegenerateOutput(f"conv2d output extent {oh}x{ow} from input {h}x{wd}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else np.ascontiguousarray(x)
    cols = _kernels.im2col(xp, kh, kw, stride, oh, ow).reshape(b, c * kh * kw, oh * ow)
    w2 = w.reshape(o, -1)
    out = np.matmul(w2, cols).reshape(b, o, oh, ow)
    return out, (cols, w, x.shape, stride, pad, oh, ow)


@conv2d.defvjp
def _conv2d_vjp(ctx, g):
    cols, w, xshape, stride, pad, oh, ow = ctx
    b, c, h, wd = xshape
    o, _, kh, kw = w.shape
    g2 = g.reshape(b, o, oh * ow)
    dw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    dcols = np.matmul(w.reshape(o, -1).T, g2).reshape(b, c, kh, kw, oh, ow)
    dxp = _kernels.col2im(np.ascontiguousarray(dcols), h + 2 * pad, wd + 2 * pad, stride)
    return dxp[:, :, pad:pad + h, pad:pad + wd], dw


class BNState:
    """Running statistics for one batch-norm layer."""

    def __init__(self, channels, momentum=0.1):
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum


@primitive("batch_norm")
def batch_norm(x, gamma, beta, state=None, mode="train", eps=1e-5):
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    if mode == "train":
        if x.shape[0] < 2:
            raise BatchTooSmall("batch_norm in train mode needs at least 2 samples")
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        if state is not None:
            n = x.size // x.shape[1]
            m = state.momentum
            state.running_mean = (1 - m) * state.running_mean + m * mu
            state.running_var = (1 - m) * state.running_var + m * var * n / (n - 1)
    elif mode == "eval":
        if state is None:
            raise ValueError("eval-mode batch_norm requires running statistics")
        mu, var = state.running_mean, state.running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu.reshape(bshape)) * inv_std.reshape(bshape)
    out = gamma.reshape(bshape) * xhat + beta.reshape(bshape)
    return out, (xhat, inv_std, gamma, axes, bshape, mode)


@batch_norm.defvjp
def _batch_norm_vjp(ctx, g):
    xhat, inv_std, gamma, axes, bshape, mode = ctx
    dgamma = (g * xhat).sum(axis=axes)
    dbeta = g.sum(axis=axes)
    dxhat = g * gamma.reshape(bshape)
    if mode == "eval":
        return dxhat * inv_std.reshape(bshape), dgamma, dbeta
    m = xhat.size // xhat.shape[1]
    s1 = dxhat.sum(axis=axes).reshape(bshape)
    s2 = (dxhat * xhat).sum(axis=axes).reshape(bshape)
    dx = inv_std.reshape(bshape) / m * (m * dxhat - s1 - xhat * s2)
    return dx, dgamma, dbeta


@primitive("global_avg_pool")
def global_avg_pool(x):
    if x.ndim != 4 or x.shape[2] < 1 or x.shape[3] < 1:
        raise ShapeMismatch(f"global_avg_pool expects B,C,H,W, got {x.shape}")
    return x.mean(axis=(2, 3)), x.shape


@global_avg_pool.defvjp
def _gap_vjp(shape, g):
    hw = shape[2] * shape[3]
    return (np.broadcast_to((g / hw)[:, :, None, None], shape).copy(),)


@primitive("log_softmax")
def log_softmax(x):
    s = x - x.max(axis=-1, keepdims=True)
    out = s - np.log(np.exp(s).sum(axis=-1, keepdims=True))
    return out, out


@log_softmax.defvjp
def _log_softmax_vjp(out, g):
    return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)


# ---------------------------------------------------------------- kernels and distances

@primitive("frobenius_normalize")
def frobenius_normalize(k, eps=1e-12, batched=False):
    """``k / max(||k||_F, eps)``; with ``batched`` each leading slice separately."""
    if batched:
        axes = tuple(range(1, k.ndim))
        norm = np.sqrt(np.sum(k * k, axis=axes, keepdims=True))
    else:
        norm = np.sqrt(np.sum(k * k))
    denom = np.maximum(norm, eps)
    out = k / denom
    return out, (out, norm, denom, eps, batched)


@frobenius_normalize.defvjp
def _frob_vjp(ctx, g):
    out, norm, denom, eps, batched = ctx
    if batched:
        axes = tuple(range(1, out.ndim))
        proj = np.sum(g * out, axis=axes, keepdims=True)
    else:
        proj = np.sum(g * out)
    live = norm > eps
    return (np.where(live, (g - out * proj) / denom, g / denom),)


@primitive("euclidean_distance")
def euclidean_distance(a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(f"euclidean_distance: {a.shape} vs {b.shape}")
    diff = a - b
    return np.sqrt(np.sum(diff * diff)), diff


@euclidean_distance.defvjp
def _euclid_vjp(diff, g):
    d = np.sqrt(np.sum(diff * diff))
    ga = g * diff / d if d > 0 else np.zeros_like(diff)
    return ga, -ga


@primitive("pairwise_euclidean")
def pairwise_euclidean(x):
    if x.ndim != 2:
        raise ShapeMismatch(f"pairwise_euclidean expects N,C, got {x.shape}")
    if x.shape[0] < 2:
        raise BatchTooSmall("pairwise_euclidean needs at least 2 rows")
    diff = x[:, None, :] - x[None, :, :]
    d = np.sqrt(np.maximum(np.sum(diff * diff, axis=2), 0.0))
    return d, (diff, d)


@pairwise_euclidean.defvjp
def _pairwise_vjp(ctx, g):
    diff, d = ctx
    coef = np.divide(g, d, out=np.zeros_like(d), where=d > 0)
    dx = np.einsum("ij,ijc->ic", coef, diff) - np.einsum("ij,ijc->jc", coef, diff)
    return (dx,)


@primitive("dynamic_conv_1x1")
def dynamic_conv_1x1(f, k):
    """Left-multiply each image's channel vectors by that image's kernel."""
    if f.ndim not in (2, 4):
        raise ShapeMismatch(f"dynamic_conv_1x1 expects B,C or B,C,H,W input, got {f.shape}")
    b, c = f.shape[:2]
    if k.ndim != 3:
        raise ShapeMismatch(f"kernels must be B,C,C, got {k.shape}")
    if k.shape[0] != b:
        raise KernelCountMismatch(f"{k.shape[0]} kernels for a batch of {b}")
    if k.shape[1:] != (c, c):
        raise ShapeMismatch(f"kernel extent {k.shape[1:]} does not match {c} channels")
    f2 = f.reshape(b, c, -1)
    return np.matmul(k, f2).reshape(f.shape), (f2, k, f.shape)


@dynamic_conv_1x1.defvjp
def _dynconv_vjp(ctx, g):
    f2, k, shape = ctx
    g2 = g.reshape(f2.shape)
    df = np.matmul(k.transpose(0, 2, 1), g2).reshape(shape)
    dk = np.matmul(g2, f2.transpose(0, 2, 1))
    return df, dk


def _check_pair_inputs(f, k):
    if f.ndim != 2 or k.ndim != 3 or k.shape[0] != f.shape[0] or k.shape[1:] != (f.shape[1],) * 2:
        raise ShapeMismatch(f"features {f.shape} and kernels {k.shape} disagree")


def _cross_grads(w, fq, kq, fg, kg):
    # w[q, g] = dL/dU[q, g] with U[q, g] = K_q f_g - K_g f_q
    dkq = np.einsum("qga,gb->qab", w, fg)
    dfg = np.einsum("qab,qga->gb", kq, w)
    dkg = -np.einsum("qga,qb->gab", w, fq)
    dfq = -np.einsum("gab,qga->qb", kg, w)
    return dfq, dkq, dfg, dkg


@primitive("mutual_distance_matrix")
def mutual_distance_matrix(f, k):
    """Symmetric matrix of ``||K_i f_j - K_j f_i||``, one evaluation per unordered pair."""
    _check_pair_inputs(f, k)
    if f.shape[0] < 2:
        raise BatchTooSmall("mutual distance matrix needs at least 2 images")
    d, u = _kernels.mutual_self(np.ascontiguousarray(f), np.ascontiguousarray(k))
    return d, (f, k, d, u)


@mutual_distance_matrix.defvjp
def _mutual_self_vjp(ctx, g):
    f, k, d, u = ctx
    gs = np.triu(g + g.T, 1)
    coef = np.divide(gs, d, out=np.zeros_like(d), where=d > 0)
    w = coef[:, :, None] * u
    dfq, dkq, dfg, dkg = _cross_grads(w, f, k, f, k)
    return dfq + dfg, dkq + dkg


@primitive("mutual_cross_distance")
def mutual_cross_distance(fq, kq, fg, kg):
    _check_pair_inputs(fq, kq)
    _check_pair_inputs(fg, kg)
    if fq.shape[1] != fg.shape[1]:
        raise ShapeMismatch(f"query width {fq.shape[1]} != gallery width {fg.shape[1]}")
    d, u = _kernels.mutual_cross(*(np.ascontiguousarray(a) for a in (fq, kq, fg, kg)))
    return d, (fq, kq, fg, kg, d, u)


@mutual_cross_distance.defvjp
def _mutual_cross_vjp(ctx, g):
    fq, kq, fg, kg, d, u = ctx
    coef = np.divide(g, d, out=np.zeros_like(d), where=d > 0)
    return _cross_grads(coef[:, :, None] * u, fq, kq, fg, kg)


# ---------------------------------------------------------------- selection

def _masked_select(x, mask, pick):
    if mask.shape != x.shape:
        raise ShapeMismatch(f"mask {mask.shape} vs values {x.shape}")
    fill = -np.inf if pick is np.argmax else np.inf
    idx = pick(np.where(mask, x, fill), axis=1)
    _note_kink(idx)
    rows = np.arange(x.shape[0])
    return x[rows, idx], (x.shape, rows, idx)


def _masked_select_vjp(ctx, g):
    shape, rows, idx = ctx
    dx = np.zeros(shape)
    dx[rows, idx] = g
    return (dx,)


@primitive("masked_max")
def masked_max(x, mask=None):
    """Row-wise max over entries where ``mask`` is set (first index on ties)."""
    return _masked_select(x, np.asarray(mask, dtype=bool), np.argmax)


@primitive("masked_min")
def masked_min(x, mask=None):
    return _masked_select(x, np.asarray(mask, dtype=bool), np.argmin)


masked_max.defvjp(_masked_select_vjp)
masked_min.defvjp(_masked_select_vjp)

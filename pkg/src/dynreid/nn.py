"""Parameter containers for the layers the model is assembled from."""

import numpy as np

from .autodiff import ops
from .autodiff.ops import BNState
from .autodiff.tensor import Tensor


class Module:
    def __init__(self):
        self._params = {}
        self._children = {}
        self._bn = {}

    def param(self, name, value):
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        return t

    def child(self, name, module):
        self._children[name] = module
        return module

    def bn_state(self, name, channels):
        s = BNState(channels)
        self._bn[name] = s
        return s

    def named_parameters(self, prefix=""):
        for name, t in self._params.items():
            yield prefix + name, t
        for cname, mod in self._children.items():
            yield from mod.named_parameters(f"{prefix}{cname}.")

    def named_buffers(self, prefix=""):
        for name, s in self._bn.items():
            yield f"{prefix}{name}.running_mean", s, "running_mean"
            yield f"{prefix}{name}.running_var", s, "running_var"
        for cname, mod in self._children.items():
            yield from mod.named_buffers(f"{prefix}{cname}.")

    def parameters(self):
        return [t for _, t in self.named_parameters()]


def he_normal(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Linear(Module):
    def __init__(self, rng, n_in, n_out, bias=True, std=None):
        super().__init__()
        w = he_normal(rng, (n_in, n_out), n_in) if std is None else rng.normal(0.0, std, (n_in, n_out))
        self.weight = self.param("weight", w)
        self.bias = self.param("bias", np.zeros(n_out)) if bias else None

    def __call__(self, x):
        y = ops.matmul(x, self.weight)
        return ops.add(y, self.bias) if self.bias is not None else y


class BatchNorm(Module):
    def __init__(self, channels):
        super().__init__()
        self.gamma = self.param("gamma", np.ones(channels))
        self.beta = self.param("beta", np.zeros(channels))
        self.state = self.bn_state("bn", channels)

    def __call__(self, x, mode):
        return ops.batch_norm(x, self.gamma, self.beta, state=self.state, mode=mode)


class ConvBNReLU(Module):
    def __init__(self, rng, c_in, c_out, kernel=3, stride=1, pad=None):
        super().__init__()
        self.stride = stride
        self.pad = kernel // 2 if pad is None else pad
        self.weight = self.param("weight", he_normal(rng, (c_out, c_in, kernel, kernel), c_in * kernel * kernel))
        self.norm = self.child("norm", BatchNorm(c_out))

    def __call__(self, x, mode):
        y = ops.conv2d(x, self.weight, stride=self.stride, pad=self.pad)
        return ops.relu(self.norm(y, mode))

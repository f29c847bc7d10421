"""Central finite-difference gradient checker."""

from dataclasses import dataclass

import numpy as np

from .ops import trace_kinks
from .tensor import Tape, no_grad


@dataclass
class GradCheckReport:
    max_rel_error: float
    analytic_zero: bool
    coords_checked: int
    kinks_skipped: int = 0

    def passed(self, tol=1e-4):
        return self.max_rel_error < tol


def _same_branches(a, b):
    return len(a) == len(b) and all(np.array_equal(u, v) for u, v in zip(a, b))


def grad_check(f, x, step=1e-5, coords=None, skip_kinks=True):
    """Compare the tape gradient of scalar ``f(x)`` against central differences.

    Per coordinate the error is ``|a - n| / max(|a|, |n|, 1e-8)``; the
    report carries the maximum. ``x.data`` is perturbed in place and
    restored, so ``f`` may close over ``x`` as a model parameter.
    ``coords`` restricts the check to a subset of flat indices. With
    ``skip_kinks`` a coordinate whose stencil flips a ReLU mask or a
    hardest-sample choice is not differentiable there and is skipped.
    """
    x.data = np.array(x.data, dtype=np.float64)
    x.requires_grad = True
    x.grad = None
    with Tape() as tape:
        with trace_kinks() as base:
            y = f(x)
    if y.node is not None and y.node[0] is tape:
        tape.backward(y)
    analytic = np.zeros(x.shape) if x.grad is None else np.array(x.grad)
    x.grad = None

    flat = x.data.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    n = skipped = 0
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            with trace_kinks() as up:
                fp = float(f(x).data)
            flat[i] = orig - step
            with trace_kinks() as down:
                fm = float(f(x).data)
            flat[i] = orig
            if skip_kinks and not (_same_branches(base, up) and _same_branches(base, down)):
                skipped += 1
                continue
            num = (fp - fm) / (2 * step)
            a = analytic.reshape(-1)[i]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
            n += 1
    return GradCheckReport(worst, bool(not np.any(analytic)), n, skipped)

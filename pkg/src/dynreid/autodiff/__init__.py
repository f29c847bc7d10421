from . import ops
from .gradcheck import GradCheckReport, grad_check
from .ops import REGISTRY, BNState
from .tensor import Tape, Tensor, as_tensor, backward, no_grad

__all__ = [
    "BNState",
    "GradCheckReport",
    "REGISTRY",
    "Tape",
    "Tensor",
    "as_tensor",
    "backward",
    "grad_check",
    "no_grad",
    "ops",
]

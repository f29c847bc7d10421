"""Re-identification with per-image and per-pair generated 1x1 kernels, on a numpy autodiff engine."""

from .config import BRANCHES, TrainConfig
from .data import SynthSpec, generate_dataset, read_dataset, split_query_gallery, write_dataset
from .metrics import EvalReport, compute_cmc, compute_map
from .model import DynReIDModel

__version__ = "0.1.0"

__all__ = [
    "BRANCHES",
    "EvalReport",
    "DynReIDModel",
    "SynthSpec",
    "TrainConfig",
    "compute_cmc",
    "compute_map",
    "generate_dataset",
    "read_dataset",
    "split_query_gallery",
    "write_dataset",
]

"""Adaptive tickets: one sparse subnetwork per data subset over a shared,
jointly retrained parameter set, with routed evaluation and mask-similarity
diagnostics."""

from .kernels import BACKEND
from .masking import BinaryMask, MaskSet, PruneSchedule
from .tensor import ParamSet, init_params

__all__ = ["BACKEND", "BinaryMask", "MaskSet", "ParamSet", "PruneSchedule", "init_params"]
__version__ = "0.1.0"

"""Clustering / scattering / pruning schedules for image tokens in an LVLM decoder.

Runs the schedule on a small random decoder, and prices real model sizes
with an analytical FLOPs model.
"""

from .core_math import CostMeter, make_rng
from .cost_model import CostReport, calibrate, layer_flops, n_avg, staged_flops
from .model import TOY_DIMS, ModelDims, init_weights, vision_stub
from .pipeline import CspConfig, run_csp, run_vanilla
from .selection import ClusterStrategy, InstanceMaskSet, SelectionResult

__all__ = [
    "ClusterStrategy",
    "CostMeter",
    "CostReport",
    "CspConfig",
    "InstanceMaskSet",
    "ModelDims",
    "SelectionResult",
    "TOY_DIMS",
    "calibrate",
    "init_weights",
    "layer_flops",
    "make_rng",
    "n_avg",
    "run_csp",
    "run_vanilla",
    "staged_flops",
    "vision_stub",
]

"""Holistic instance order prediction: full occlusion and depth order
matrices from one forward pass, plus baselines, metrics, and a synthetic
scene harness."""

from .autograd import Tensor
from .head import HeadConfig, OrderHead
from .matching import Assignment, hungarian, match_segments
from .metrics import occlusion_prf, whdr
from .orders import DepthMatrix, OcclusionMatrix, validate_depth, validate_occlusion
from .synth import SceneConfig, generate_scene, render
from .training import HolisticModel, ModelConfig, TrainConfig, train

__all__ = [
    "Tensor",
    "HeadConfig",
    "OrderHead",
    "Assignment",
    "hungarian",
    "match_segments",
    "occlusion_prf",
    "whdr",
    "DepthMatrix",
    "OcclusionMatrix",
    "validate_depth",
    "validate_occlusion",
    "SceneConfig",
    "generate_scene",
    "render",
    "HolisticModel",
    "ModelConfig",
    "TrainConfig",
    "train",
]

__version__ = "0.1.0"

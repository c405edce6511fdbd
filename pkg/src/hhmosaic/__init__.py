"""Hierarchical homography estimation and mosaicing for video sequences."""
from .homography import AffineTransform, PatchCorners, ThreePointDelta, affine_from_deltas, compose, invert
from .fusion import FusionHead, FrameTriple, fuse
from .regressor import ModelConfig, RegressorModel, TrainConfig, train

__all__ = [
    "AffineTransform", "PatchCorners", "ThreePointDelta", "affine_from_deltas", "compose", "invert",
    "FusionHead", "FrameTriple", "fuse", "ModelConfig", "RegressorModel", "TrainConfig", "train",
]
__version__ = "0.1.0"

"""Opacity radiance fields: bounded volumetric sampling plus a convolutional renderer for fuzzy objects."""

from .camera import CameraView, TurntableRig, default_rig, generate_rays, project, propagate_extrinsics
from .carving import DepthBounds, ShapeFromSilhouette, VoxelGrid, carve
from .config import ConfigError, RunConfig
from .estimator import OpacityRadianceField
from .matte import KeyingMasker, Trimap, TrimapGenerator, key_out, make_trimap
from .metrics import EvalReport, psnr, region_masks, sad, ssim
from .model import ModelConfig, OpacityFieldModel
from .scene import GroundTruthView, fuzzy_sphere, generate_dataset, homogeneous_slab, oracle_render

__version__ = "0.1.0"

__all__ = [
    "CameraView", "TurntableRig", "default_rig", "generate_rays", "project", "propagate_extrinsics",
    "DepthBounds", "ShapeFromSilhouette", "VoxelGrid", "carve", "ConfigError", "RunConfig",
    "OpacityRadianceField", "KeyingMasker", "Trimap", "TrimapGenerator", "key_out", "make_trimap",
    "EvalReport", "psnr", "region_masks", "sad", "ssim", "ModelConfig", "OpacityFieldModel",
    "GroundTruthView", "fuzzy_sphere", "generate_dataset", "homogeneous_slab", "oracle_render",
]

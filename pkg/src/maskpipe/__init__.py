"""Unsupervised attention masks for small-object image change detection."""

from .attention_mask import MaskGenConfig, apply_mask, binarize, generate_attention_mask
from .detection import DetectConfig, difference_map, gate_with_mask, merge_uncertainty, threshold
from .geometry import (
    InlierSet,
    MatchSet,
    RansacConfig,
    estimate_homography_ransac,
    mutual_nearest_neighbors,
)
from .imaging import (
    BinaryMask,
    FeatureMap,
    Image,
    Pose,
    ScoreMap,
    hadamard,
    resize_nearest,
)
from .patch_features import DescriptorGrid, PatchGridConfig, descriptor_distance, extract_descriptors
from .warping import FlowField, flow_from_homography, load_flow, save_flow, warp_reference

__version__ = "0.1.0"

__all__ = [
    "BinaryMask",
    "DescriptorGrid",
    "DetectConfig",
    "FeatureMap",
    "FlowField",
    "Image",
    "InlierSet",
    "MaskGenConfig",
    "MatchSet",
    "PatchGridConfig",
    "Pose",
    "RansacConfig",
    "ScoreMap",
    "apply_mask",
    "binarize",
    "descriptor_distance",
    "difference_map",
    "estimate_homography_ransac",
    "extract_descriptors",
    "flow_from_homography",
    "gate_with_mask",
    "generate_attention_mask",
    "hadamard",
    "load_flow",
    "merge_uncertainty",
    "mutual_nearest_neighbors",
    "resize_nearest",
    "save_flow",
    "threshold",
    "warp_reference",
]

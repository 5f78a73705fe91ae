"""Attention mask generation and feature-map masking.

The mask marks which patch cells of the live image were geometrically
verified against every frame of a reference sequence: starting from an
all-ones grid, each reference frame contributes the binarized inlier set
of its match verification, intersected in via element-wise product. A
cell survives only if it matched consistently across the whole sequence,
which makes it trusted static background under the default polarity.

The mask is applied to intermediate feature maps channel-wise, so an
external Siamese network can round-trip its feature tensors through the
".fmap" format and receive them masked.
"""

import hashlib
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import InlierSet, RansacConfig, estimate_homography_ransac, mutual_nearest_neighbors
from .imaging import BinaryMask, FeatureMap, Image, hadamard
from .patch_features import DescriptorGrid, PatchGridConfig, extract_descriptors

log = logging.getLogger("maskpipe.attention_mask")

POLARITIES = ("inlier_one", "inlier_zero")


@dataclass(frozen=True)
class MaskGenConfig:
    """Knobs for mask generation over a reference window of 2T+1 frames."""

    T: int = 10
    patch: PatchGridConfig = field(default_factory=PatchGridConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    polarity: str = "inlier_one"
    skip_degenerate_frames: bool = True

    def __post_init__(self):
        if self.T < 0:
            raise ValueError(f"T must be >= 0, got {self.T}")
        if self.polarity not in POLARITIES:
            raise ValueError(f"polarity must be one of {POLARITIES}, got {self.polarity!r}")


def frame_seed(base_seed: int, frame_id: str) -> int:
    """Stable per-frame RNG seed so mask generation is order-invariant."""
    digest = hashlib.sha256(f"{base_seed}:{frame_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def binarize(inliers: InlierSet, grid_w: int, grid_h: int, polarity: str = "inlier_one") -> BinaryMask:
    """Mark the live cells of verified matches on a grid.

    Under inlier_one, a cell is 1 exactly when it appears as the live side
    of an inlier pair; inlier_zero emits the complement.
    """
    if polarity not in POLARITIES:
        raise ValueError(f"polarity must be one of {POLARITIES}, got {polarity!r}")
    mask = np.zeros((grid_h, grid_w), dtype=np.uint8)
    if len(inliers):
        rows = inliers.live_cells[:, 0]
        cols = inliers.live_cells[:, 1]
        if rows.min() < 0 or cols.min() < 0 or rows.max() >= grid_h or cols.max() >= grid_w:
            raise ValueError(
                f"inlier cell outside {grid_w}x{grid_h} grid: "
                f"({int(rows.max())}, {int(cols.max())})"
            )
        mask[rows, cols] = 1
    if polarity == "inlier_zero":
        mask = 1 - mask
    return BinaryMask(mask)


def generate_attention_mask(
    live: Image,
    refs: list[Image],
    cfg: MaskGenConfig = MaskGenConfig(),
    descriptors: dict[str, DescriptorGrid] | None = None,
    return_details: bool = False,
):
    """Intersect per-reference verification masks over a reference window.

    For each reference frame: extract descriptors, match them to the live
    grid by mutual nearest neighbor, verify with RANSAC, binarize, and
    fold into the running mask by element-wise product. Per-frame RANSAC
    seeds are keyed by frame id, so permuting the reference sequence
    yields an identical mask.

    ``descriptors`` optionally maps frame ids to externally computed
    grids used in place of the built-in extractor. A frame whose
    verification comes back degenerate is skipped with a warning when
    skip_degenerate_frames is set (the default); otherwise it contributes
    an all-zeros binarization, erasing the whole mask.

    Returns the mask, or ``(mask, {frame_id: InlierSet})`` with
    return_details.
    """
    if not refs:
        raise ValueError("reference sequence is empty")
    if len(refs) > 2 * cfg.T + 1:
        raise ValueError(f"got {len(refs)} reference frames, window allows {2 * cfg.T + 1}")

    def grid_for(image: Image) -> DescriptorGrid:
        if descriptors is not None and image.frame_id in descriptors:
            return descriptors[image.frame_id]
        return extract_descriptors(image, cfg.patch)

    live_grid = grid_for(live)
    mask = np.ones((live_grid.grid_h, live_grid.grid_w), dtype=np.uint8)
    details: dict[str, InlierSet] = {}
    for ref in refs:
        ref_grid = grid_for(ref)
        if (ref_grid.grid_w, ref_grid.grid_h) != (live_grid.grid_w, live_grid.grid_h):
            raise ValueError(
                f"descriptor grid of frame {ref.frame_id!r} is "
                f"{ref_grid.grid_w}x{ref_grid.grid_h}, live grid is "
                f"{live_grid.grid_w}x{live_grid.grid_h}"
            )
        matches = mutual_nearest_neighbors(live_grid, ref_grid)
        ransac_cfg = replace(cfg.ransac, rng_seed=frame_seed(cfg.ransac.rng_seed, ref.frame_id))
        inliers = estimate_homography_ransac(matches, ransac_cfg)
        details[ref.frame_id] = inliers
        if inliers.degenerate and cfg.skip_degenerate_frames:
            log.warning("skipping degenerate reference frame %r", ref.frame_id)
            continue
        frame_mask = binarize(inliers, live_grid.grid_w, live_grid.grid_h, cfg.polarity)
        mask = hadamard(mask, frame_mask.data).astype(np.uint8)
    result = BinaryMask(mask)
    if return_details:
        return result, details
    return result


def apply_mask(fmap: FeatureMap, mask: BinaryMask) -> FeatureMap:
    """Zero masked-out cells across all channels of a feature map.

    The mask must already be resized to the feature map's width and
    height; fmap_new[i, j, k] = fmap_old[i, j, k] * mask[i, j].
    """
    if (mask.height, mask.width) != (fmap.height, fmap.width):
        raise ValueError(
            f"mask {mask.width}x{mask.height} does not match feature map "
            f"{fmap.width}x{fmap.height}; resize the mask first"
        )
    return FeatureMap(hadamard(fmap.data, mask.data))

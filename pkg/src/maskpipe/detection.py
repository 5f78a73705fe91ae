"""Classical change scoring from an aligned image pair.

This backend stands in for a learned Siamese detector: mean absolute
channel difference, box smoothing, attention-mask gating, and the
uncertainty merge that multiplies per-pixel scores by warp uncertainty.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imaging import BinaryMask, Image, ScoreMap, hadamard

GATE_MODES = ("suppress_matched", "suppress_unmatched", "off")


@dataclass(frozen=True)
class DetectConfig:
    gate_mode: str = "suppress_matched"
    smoothing_radius: int = 2
    decision_threshold: float = 0.5
    use_uncertainty: bool = True

    def __post_init__(self):
        if self.gate_mode not in GATE_MODES:
            raise ValueError(f"gate_mode must be one of {GATE_MODES}, got {self.gate_mode!r}")
        if self.smoothing_radius < 0:
            raise ValueError(f"smoothing_radius must be >= 0, got {self.smoothing_radius}")
        if not 0.0 <= self.decision_threshold <= 1.0:
            raise ValueError(f"decision_threshold must lie in [0, 1], got {self.decision_threshold}")


def difference_map(
    live: Image, warped_ref: Image, validity: BinaryMask, cfg: DetectConfig = DetectConfig()
) -> ScoreMap:
    """Mean absolute channel difference, box-smoothed and clamped to [0, 1].

    Pixels invalid under the warp score 0: their raw difference is zeroed
    before smoothing (so garbage fill does not bleed into neighbors) and
    the smoothed score is zeroed there again.
    """
    if (live.height, live.width) != (warped_ref.height, warped_ref.width):
        raise ValueError(
            f"image dims do not match: {live.width}x{live.height} vs "
            f"{warped_ref.width}x{warped_ref.height}"
        )
    if (validity.height, validity.width) != (live.height, live.width):
        raise ValueError(
            f"validity dims {validity.width}x{validity.height} do not match "
            f"{live.width}x{live.height}"
        )
    if live.channels != warped_ref.channels:
        raise ValueError(f"channel counts differ: {live.channels} vs {warped_ref.channels}")
    diff = np.abs(live.data.astype(np.float64) - warped_ref.data.astype(np.float64)).mean(axis=2)
    diff *= validity.data
    if cfg.smoothing_radius > 0:
        size = 2 * cfg.smoothing_radius + 1
        diff = ndimage.uniform_filter(diff, size=size, mode="constant", cval=0.0)
        diff *= validity.data
    return ScoreMap(np.clip(diff, 0.0, 1.0).astype(np.float32))


def merge_uncertainty(output_old: ScoreMap, uncertainty: np.ndarray) -> ScoreMap:
    """Per-pixel product of score and warp uncertainty.

    Uncertainty 1 means no reliable correspondence (change prior), so the
    score passes through; values below 1 can only shrink scores.
    """
    unc = np.asarray(uncertainty, dtype=np.float32)
    if unc.shape != (output_old.height, output_old.width):
        raise ValueError(
            f"uncertainty shape {unc.shape} does not match score "
            f"{(output_old.height, output_old.width)}"
        )
    if float(unc.min()) < 0.0 or float(unc.max()) > 1.0:
        raise ValueError("uncertainty must lie in [0, 1]")
    return ScoreMap(np.multiply(output_old.data, unc))


def gate_with_mask(score: ScoreMap, mask: BinaryMask, mode: str) -> ScoreMap:
    """Suppress scores on one side of the attention mask.

    suppress_matched zeroes verified (mask=1) cells, suppress_unmatched
    zeroes the complement, off returns the score unchanged. The mask must
    already be resized to the score dimensions.
    """
    if mode not in GATE_MODES:
        raise ValueError(f"mode must be one of {GATE_MODES}, got {mode!r}")
    if mode == "off":
        return score
    if (mask.height, mask.width) != (score.height, score.width):
        raise ValueError(
            f"mask {mask.width}x{mask.height} does not match score "
            f"{score.width}x{score.height}; resize the mask first"
        )
    keep = (1 - mask.data) if mode == "suppress_matched" else mask.data
    return ScoreMap(hadamard(score.data, keep))


def threshold(score: ScoreMap, tau: float) -> BinaryMask:
    """Binary decision: 1 where score >= tau."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {tau}")
    return BinaryMask((score.data >= tau).astype(np.uint8))

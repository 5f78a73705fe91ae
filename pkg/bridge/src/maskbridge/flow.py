"""Dense flow with a normalized uncertainty plane.

The default estimator is Farneback dense optical flow; per-pixel
uncertainty comes from forward-backward cycle consistency, squashed into
[0, 1] so missing correspondence saturates at 1. A TorchScript flow model
can be substituted with ``--model torchscript --weights file.pt``; it must
map two (1, 1, H, W) images to a (1, 2, H, W) displacement tensor.
"""

import logging
from pathlib import Path

import cv2
import numpy as np

from .descriptors import MissingWeightsError

log = logging.getLogger("maskbridge.flow")

# Cycle error scales: an error of CYCLE_SCALE px (plus a share of the local
# displacement) saturates the uncertainty at 1.
CYCLE_SCALE = 2.0
CYCLE_RELATIVE = 0.25


def farneback(live: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Displacement on the live grid: ref sample position minus live pixel."""
    live_u8 = np.clip(live * 255.0, 0, 255).astype(np.uint8)
    ref_u8 = np.clip(ref * 255.0, 0, 255).astype(np.uint8)
    return cv2.calcOpticalFlowFarneback(
        live_u8, ref_u8, None, 0.5, 3, 21, 3, 5, 1.1, 0
    ).astype(np.float32)


def _sample(field: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    h, w = field.shape[:2]
    xc = np.clip(x, 0, w - 1)
    yc = np.clip(y, 0, h - 1)
    x0 = np.floor(xc).astype(np.int64)
    y0 = np.floor(yc).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xc - x0)[..., None]
    fy = (yc - y0)[..., None]
    return (
        field[y0, x0] * (1 - fx) * (1 - fy)
        + field[y0, x1] * fx * (1 - fy)
        + field[y1, x0] * (1 - fx) * fy
        + field[y1, x1] * fx * fy
    )


def cycle_uncertainty(forward: np.ndarray, backward: np.ndarray) -> np.ndarray:
    """Forward-backward inconsistency normalized to [0, 1]."""
    h, w = forward.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w]
    back_at = _sample(backward, xs + forward[:, :, 0], ys + forward[:, :, 1])
    cycle = forward + back_at
    err = np.hypot(cycle[:, :, 0], cycle[:, :, 1])
    magnitude = np.hypot(forward[:, :, 0], forward[:, :, 1])
    scale = CYCLE_SCALE + CYCLE_RELATIVE * magnitude
    return np.clip(err / scale, 0.0, 1.0).astype(np.float32)


def estimate_flow(
    live: np.ndarray, ref: np.ndarray, model: str = "farneback", weights: str | None = None
) -> tuple[np.ndarray, np.ndarray]:
    if model == "farneback":
        forward = farneback(live, ref)
        backward = farneback(ref, live)
    elif model == "torchscript":
        if not weights or not Path(weights).is_file():
            raise MissingWeightsError(
                f"model weights not found: {weights!r} (pass --weights to a TorchScript file)"
            )
        import torch

        net = torch.jit.load(weights, map_location="cpu")
        net.eval()
        with torch.no_grad():
            def run(a, b):
                ta = torch.from_numpy(a).float().reshape(1, 1, *a.shape)
                tb = torch.from_numpy(b).float().reshape(1, 1, *b.shape)
                out = net(ta, tb)
                return out[0].permute(1, 2, 0).numpy().astype(np.float32)

            forward = run(live, ref)
            backward = run(ref, live)
    else:
        raise ValueError(f"unknown flow model {model!r}")
    return forward, cycle_uncertainty(forward, backward)

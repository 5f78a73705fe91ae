"""Dense warps that align a reference image to the live viewpoint.

A flow field is indexed on the live (output) pixel grid: the displacement
at live pixel p points to the corresponding reference location p + d(p).
Warping is backward with bilinear sampling, so the output has no holes; a
validity mask marks live pixels whose reference sample falls outside the
reference bounds.

Flow fields normally come from an external dense-alignment model through
the ".flow" file format, which also carries a per-pixel warp uncertainty
plane in [0, 1] (1 means no reliable correspondence). When no external
flow exists, a fallback field can be synthesized from a verified
homography; its uncertainty plane is the binary out-of-bounds indicator.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import BinaryMask, FormatError, Image, bilinear_sample

FLOW_MAGIC = b"FLO1"
FLOW_VERSION = 1
_FLOW_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class FlowField:
    """Displacement field (H, W, 2) as (dx, dy) plus uncertainty (H, W)."""

    displacement: np.ndarray
    uncertainty: np.ndarray

    def __post_init__(self):
        disp = np.ascontiguousarray(self.displacement, dtype=np.float32)
        unc = np.ascontiguousarray(self.uncertainty, dtype=np.float32)
        if disp.ndim != 3 or disp.shape[2] != 2 or min(disp.shape[:2]) < 1:
            raise ValueError(f"displacement must be HxWx2, got {disp.shape}")
        if unc.shape != disp.shape[:2]:
            raise ValueError(
                f"uncertainty shape {unc.shape} does not match displacement {disp.shape[:2]}"
            )
        if not np.isfinite(disp).all():
            raise ValueError("displacement must be finite everywhere")
        if float(unc.min()) < 0.0 or float(unc.max()) > 1.0:
            raise ValueError("uncertainty must lie in [0, 1] everywhere")
        disp.setflags(write=False)
        unc.setflags(write=False)
        object.__setattr__(self, "displacement", disp)
        object.__setattr__(self, "uncertainty", unc)

    @property
    def height(self) -> int:
        return self.displacement.shape[0]

    @property
    def width(self) -> int:
        return self.displacement.shape[1]


def warp_reference(ref: Image, flow: FlowField) -> tuple[Image, BinaryMask]:
    """Resample the reference image into the live viewpoint.

    Output pixel p takes the bilinearly interpolated reference value at
    p + d(p). The returned validity mask is 0 where that location falls
    outside the reference bounds; those pixels are filled with 0.
    """
    if (flow.height, flow.width) != (ref.height, ref.width):
        raise ValueError(
            f"flow dims {flow.width}x{flow.height} do not match image "
            f"{ref.width}x{ref.height}"
        )
    ys, xs = np.mgrid[0 : ref.height, 0 : ref.width]
    disp = flow.displacement.astype(np.float64)
    sample_x = xs + disp[:, :, 0]
    sample_y = ys + disp[:, :, 1]
    values, inside = bilinear_sample(ref.data.astype(np.float64), sample_x, sample_y)
    warped = Image(np.clip(values, 0.0, 1.0), frame_id=ref.frame_id, pose=ref.pose)
    return warped, BinaryMask(inside.astype(np.uint8))


def flow_from_homography(model: np.ndarray, width: int, height: int) -> FlowField:
    """Fallback flow from a homography mapping live pixels to reference pixels.

    displacement(x, y) = H(x, y) - (x, y); uncertainty is 1 where H(x, y)
    leaves the image bounds and 0 elsewhere.
    """
    model = np.asarray(model, dtype=np.float64)
    if model.shape != (3, 3):
        raise ValueError(f"model must be 3x3, got {model.shape}")
    if abs(np.linalg.det(model)) < 1e-12:
        raise ValueError("homography is singular")
    ys, xs = np.mgrid[0:height, 0:width]
    w = model[2, 0] * xs + model[2, 1] * ys + model[2, 2]
    if np.abs(w).min() < 1e-12:
        raise ValueError("homography maps pixels to infinity inside the canvas")
    px = (model[0, 0] * xs + model[0, 1] * ys + model[0, 2]) / w
    py = (model[1, 0] * xs + model[1, 1] * ys + model[1, 2]) / w
    disp = np.stack([px - xs, py - ys], axis=2)
    outside = (px < 0.0) | (px > width - 1.0) | (py < 0.0) | (py > height - 1.0)
    return FlowField(disp.astype(np.float32), outside.astype(np.float32))


def identity_flow(width: int, height: int) -> FlowField:
    return FlowField(
        np.zeros((height, width, 2), dtype=np.float32),
        np.zeros((height, width), dtype=np.float32),
    )


def save_flow(path, flow: FlowField) -> None:
    """Write a ".flow" file; float32 payloads round-trip bit-exactly."""
    header = _FLOW_HEADER.pack(FLOW_MAGIC, FLOW_VERSION, flow.width, flow.height)
    disp = np.ascontiguousarray(flow.displacement, dtype="<f4").tobytes()
    unc = np.ascontiguousarray(flow.uncertainty, dtype="<f4").tobytes()
    Path(path).write_bytes(header + disp + unc)


def load_flow(path) -> FlowField:
    blob = Path(path).read_bytes()
    if len(blob) < _FLOW_HEADER.size:
        raise FormatError(f"{path}: truncated header at byte {len(blob)}, need {_FLOW_HEADER.size}")
    magic, version, width, height = _FLOW_HEADER.unpack_from(blob, 0)
    if magic != FLOW_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte 0, expected {FLOW_MAGIC!r}")
    if version != FLOW_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 4")
    n = width * height
    disp_bytes = n * 2 * 4
    need = _FLOW_HEADER.size + disp_bytes + n * 4
    if len(blob) != need:
        raise FormatError(f"{path}: payload ends at byte {len(blob)}, expected {need} bytes")
    disp = np.frombuffer(blob, dtype="<f4", count=n * 2, offset=_FLOW_HEADER.size)
    unc = np.frombuffer(blob, dtype="<f4", count=n, offset=_FLOW_HEADER.size + disp_bytes)
    return FlowField(disp.reshape(height, width, 2), unc.reshape(height, width))

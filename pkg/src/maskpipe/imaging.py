"""Grid primitives shared across the pipeline.

Images, feature maps, binary masks, and score maps are immutable wrappers
around numpy arrays with validated shapes and value ranges. This module
also owns the on-disk carriers for those grids: binary PGM (P5) for
grayscale images and masks, PNG for color images, and the ".fmap" binary
tensor format for feature maps.

Index convention everywhere: arrays are row-major with shape
(height, width[, channels]), element [i, j, k] is row i, column j,
channel k. Pixel coordinates are (x, y) with x along the width axis.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as _PILImage


class FormatError(ValueError):
    """An on-disk artifact failed structural validation."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Pose:
    """Planar robot pose: position in meters, heading in degrees."""

    x: float
    y: float
    yaw: float


@dataclass(frozen=True)
class Image:
    """Intensity grid in [0, 1] with shape (height, width, channels).

    Channels is 1 (grayscale) or 3 (color). 8-bit sources are divided by
    255 on load so that all downstream algebra works on normalized reals.
    """

    data: np.ndarray
    frame_id: str = ""
    pose: Pose | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError(
                f"image data must be HxWx1 or HxWx3, got shape {np.asarray(self.data).shape}"
            )
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"image dims must be positive, got shape {data.shape}")
        if float(data.min()) < 0.0 or float(data.max()) > 1.0:
            raise ValueError(
                f"image intensities must lie in [0, 1], got range "
                f"[{float(data.min()):g}, {float(data.max()):g}]"
            )
        object.__setattr__(self, "data", _freeze(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class FeatureMap:
    """Dense real-valued tensor of shape (height, width, channels)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"feature map must be HxWxC, got shape {np.asarray(self.data).shape}")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class BinaryMask:
    """Grid of {0, 1} values, shape (height, width)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or min(data.shape) < 1:
            raise ValueError(f"mask must be HxW, got shape {data.shape}")
        if not np.isin(data, (0, 1)).all():
            raise ValueError("mask values must be 0 or 1")
        object.__setattr__(self, "data", _freeze(data.astype(np.uint8)))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def count_ones(self) -> int:
        return int(self.data.sum())


@dataclass(frozen=True)
class ScoreMap:
    """Per-pixel change probability in [0, 1], shape (height, width)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 2 or min(data.shape) < 1:
            raise ValueError(f"score map must be HxW, got shape {np.asarray(self.data).shape}")
        if float(data.min()) < 0.0 or float(data.max()) > 1.0:
            raise ValueError(
                f"scores must lie in [0, 1], got range "
                f"[{float(data.min()):g}, {float(data.max()):g}]"
            )
        object.__setattr__(self, "data", _freeze(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Element-wise product of two grids.

    ``a`` may be HxW or HxWxC; ``b`` must be HxW and is broadcast across
    the channels of ``a``. Raises ValueError on any width/height mismatch.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if b.ndim != 2 or a.ndim not in (2, 3):
        raise ValueError(f"hadamard expects HxW[xC] by HxW grids, got {a.shape} vs {b.shape}")
    if a.shape[0] != b.shape[0] or a.shape[1] != b.shape[1]:
        raise ValueError(f"grid shapes do not match: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        return a * b
    return a * b[:, :, None]


def resize_nearest(mask: BinaryMask, target_w: int, target_h: int) -> BinaryMask:
    """Nearest-neighbor resize with top-left anchoring.

    out[i, j] = mask[floor(i * src_h / target_h), floor(j * src_w / target_w)]
    computed in exact integer arithmetic, so the output value set is always
    a subset of the input value set.
    """
    if target_w < 1 or target_h < 1:
        raise ValueError(f"target dims must be >= 1, got {target_w}x{target_h}")
    rows = (np.arange(target_h, dtype=np.int64) * mask.height) // target_h
    cols = (np.arange(target_w, dtype=np.int64) * mask.width) // target_w
    return BinaryMask(mask.data[np.ix_(rows, cols)])


def luma(image: Image) -> np.ndarray:
    """Grayscale plane as float64, BT.601 weights for color inputs."""
    data = image.data.astype(np.float64)
    if image.channels == 1:
        return data[:, :, 0]
    return 0.299 * data[:, :, 0] + 0.587 * data[:, :, 1] + 0.114 * data[:, :, 2]


def bilinear_sample(data: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Sample a 2-D or 3-D grid at float coordinates with edge clamping.

    Returns ``(values, inside)`` where ``inside`` marks samples that fall
    within the grid bounds [0, W-1] x [0, H-1]; outside samples are 0.
    """
    h, w = data.shape[:2]
    inside = (x >= 0.0) & (x <= w - 1.0) & (y >= 0.0) & (y <= h - 1.0)
    xc = np.clip(x, 0.0, w - 1.0)
    yc = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(xc).astype(np.int64)
    y0 = np.floor(yc).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = xc - x0
    wy = yc - y0
    if data.ndim == 3:
        wx = wx[..., None]
        wy = wy[..., None]
        keep = inside[..., None]
    else:
        keep = inside
    values = (
        data[y0, x0] * (1.0 - wx) * (1.0 - wy)
        + data[y0, x1] * wx * (1.0 - wy)
        + data[y1, x0] * (1.0 - wx) * wy
        + data[y1, x1] * wx * wy
    )
    return np.where(keep, values, 0.0), inside


# ---------------------------------------------------------------------------
# PGM (P5, maxval 255)


def _write_pgm_bytes(path: Path, plane: np.ndarray) -> None:
    header = f"P5\n{plane.shape[1]} {plane.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + plane.astype(np.uint8).tobytes())


def _read_pgm_bytes(path: Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5) file")
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        token = blob[start:pos]
        if not token.isdigit():
            raise FormatError(f"{path}: malformed PGM header near byte {start}")
        fields.append(int(token))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: unsupported PGM maxval {maxval}, expected 255")
    need = width * height
    data = blob[pos : pos + need]
    if len(data) < need:
        raise FormatError(
            f"{path}: truncated pixel data at byte {pos + len(data)}, expected {need} bytes"
        )
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width)


def write_image(path, image: Image) -> None:
    """Write an image: .pgm for grayscale, .png for color."""
    path = Path(path)
    u8 = np.rint(image.data * 255.0).astype(np.uint8)
    if path.suffix.lower() == ".pgm":
        if image.channels != 1:
            raise ValueError(f"PGM carries grayscale only, image has {image.channels} channels")
        _write_pgm_bytes(path, u8[:, :, 0])
    elif path.suffix.lower() == ".png":
        if image.channels == 1:
            _PILImage.fromarray(u8[:, :, 0], mode="L").save(path)
        else:
            _PILImage.fromarray(u8, mode="RGB").save(path)
    else:
        raise ValueError(f"unsupported image suffix: {path.suffix}")


def read_image(path, frame_id: str = "", pose: Pose | None = None) -> Image:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        plane = _read_pgm_bytes(path)
        return Image(plane.astype(np.float32) / 255.0, frame_id=frame_id, pose=pose)
    if path.suffix.lower() == ".png":
        with _PILImage.open(path) as img:
            if img.mode in ("L", "I;16"):
                arr = np.asarray(img.convert("L"), dtype=np.float32) / 255.0
            else:
                arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
        return Image(arr, frame_id=frame_id, pose=pose)
    raise ValueError(f"unsupported image suffix: {path.suffix}")


def write_mask(path, mask: BinaryMask) -> None:
    """Persist a binary mask as PGM, mapping 1 -> 255 and 0 -> 0."""
    _write_pgm_bytes(Path(path), mask.data * np.uint8(255))


def read_mask(path) -> BinaryMask:
    plane = _read_pgm_bytes(Path(path))
    if not np.isin(plane, (0, 255)).all():
        raise FormatError(f"{path}: mask PGM must contain only 0 and 255")
    return BinaryMask((plane == 255).astype(np.uint8))


def write_score_pgm(path, score: ScoreMap) -> None:
    """Lossy score rendering for inspection (score * 255, rounded)."""
    _write_pgm_bytes(Path(path), np.rint(score.data * 255.0).astype(np.uint8))


# ---------------------------------------------------------------------------
# ".fmap" binary tensor format

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1
_FMAP_HEADER = struct.Struct("<4sIIII")


def save_fmap(path, fmap: FeatureMap) -> None:
    """Write a feature map; the float32 payload round-trips bit-exactly."""
    header = _FMAP_HEADER.pack(FMAP_MAGIC, FMAP_VERSION, fmap.width, fmap.height, fmap.channels)
    payload = np.ascontiguousarray(fmap.data, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def load_fmap(path) -> FeatureMap:
    blob = Path(path).read_bytes()
    if len(blob) < _FMAP_HEADER.size:
        raise FormatError(f"{path}: truncated header at byte {len(blob)}, need {_FMAP_HEADER.size}")
    magic, version, width, height, channels = _FMAP_HEADER.unpack_from(blob, 0)
    if magic != FMAP_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte 0, expected {FMAP_MAGIC!r}")
    if version != FMAP_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 4")
    need = _FMAP_HEADER.size + width * height * channels * 4
    if len(blob) != need:
        raise FormatError(f"{path}: payload ends at byte {len(blob)}, expected {need} bytes")
    data = np.frombuffer(blob, dtype="<f4", offset=_FMAP_HEADER.size)
    return FeatureMap(data.reshape(height, width, channels))


def save_score_fmap(path, score: ScoreMap) -> None:
    """Lossless score persistence as a single-channel feature map."""
    save_fmap(path, FeatureMap(score.data[:, :, None]))


def load_score_fmap(path) -> ScoreMap:
    fmap = load_fmap(path)
    if fmap.channels != 1:
        raise FormatError(f"{path}: score maps must have 1 channel, got {fmap.channels}")
    return ScoreMap(fmap.data[:, :, 0])

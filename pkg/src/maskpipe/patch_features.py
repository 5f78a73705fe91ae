"""Patch grids and per-patch descriptors.

An image is tiled into a grid of square patches; each patch is summarized
by a 128-dim descriptor (16 spatial sub-blocks times 8 gradient-orientation
bins, L2-normalized). Descriptors depend only on the pixels inside the
patch footprint, are invariant to a global additive brightness shift, and
invariant to global positive intensity scaling after normalization.

External descriptor grids (for example from a deep model) can be injected
through the ".pdsc" file format and used anywhere a built-in grid is.
"""

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imaging import FormatError, Image, luma

DESCRIPTOR_DIM = 128
_ORIENTATION_BINS = 8
_SPATIAL_BLOCKS = 4
GRADIENT_ENERGY_EPS = 1e-6


@dataclass(frozen=True)
class PatchGridConfig:
    patch_size: int = 32
    stride: int = 32
    descriptor_dim: int = DESCRIPTOR_DIM

    def __post_init__(self):
        if self.patch_size < 4:
            raise ValueError(f"patch_size must be >= 4, got {self.patch_size}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.descriptor_dim < 1:
            raise ValueError(f"descriptor_dim must be >= 1, got {self.descriptor_dim}")


@dataclass(frozen=True)
class DescriptorGrid:
    """Row-major grid of patch descriptors with patch-center coordinates.

    descriptors has shape (grid_w * grid_h, dim); every row is unit-norm or
    the zero vector (textureless patch). centers has shape (N, 2) holding
    (x, y) pixel coordinates of each patch center.
    """

    grid_w: int
    grid_h: int
    dim: int
    descriptors: np.ndarray
    centers: np.ndarray

    def __post_init__(self):
        desc = np.ascontiguousarray(self.descriptors, dtype=np.float32)
        centers = np.ascontiguousarray(self.centers, dtype=np.int32)
        n = self.grid_w * self.grid_h
        if desc.shape != (n, self.dim):
            raise ValueError(
                f"descriptor array shape {desc.shape} does not match "
                f"{self.grid_w}x{self.grid_h} grid of dim {self.dim}"
            )
        if centers.shape != (n, 2):
            raise ValueError(f"centers shape {centers.shape} does not match {n} cells")
        if n:
            norms = np.linalg.norm(desc.astype(np.float64), axis=1)
            bad = ~((norms < GRADIENT_ENERGY_EPS) | (np.abs(norms - 1.0) < 1e-3))
            if bad.any():
                raise ValueError(
                    f"{int(bad.sum())} descriptors are neither unit-norm nor zero"
                )
        desc.setflags(write=False)
        centers.setflags(write=False)
        object.__setattr__(self, "descriptors", desc)
        object.__setattr__(self, "centers", centers)

    @property
    def cell_count(self) -> int:
        return self.grid_w * self.grid_h

    def cell_index(self, i: int, j: int) -> int:
        return i * self.grid_w + j


def grid_dims(width: int, height: int, cfg: PatchGridConfig) -> tuple[int, int]:
    """Grid dims (W_p, H_p) = floor((extent - patch) / stride) + 1 per axis."""
    if width < cfg.patch_size or height < cfg.patch_size:
        raise ValueError(
            f"image {width}x{height} smaller than one {cfg.patch_size}px patch"
        )
    gw = (width - cfg.patch_size) // cfg.stride + 1
    gh = (height - cfg.patch_size) // cfg.stride + 1
    return gw, gh


@lru_cache(maxsize=8)
def _spatial_weights(patch_size: int) -> np.ndarray:
    """(patch_size^2, 16) bilinear weight of each pixel in each sub-block.

    Pixel centers map onto a 4-block axis per dimension; contributions are
    split linearly between the two neighboring blocks and clamped at the
    patch border.
    """
    coords = (np.arange(patch_size, dtype=np.float64) + 0.5) * _SPATIAL_BLOCKS / patch_size - 0.5
    axis = np.zeros((patch_size, _SPATIAL_BLOCKS))
    i0 = np.floor(coords)
    w1 = coords - i0
    i0 = i0.astype(np.int64)
    rows = np.arange(patch_size)
    ok0 = (i0 >= 0) & (i0 < _SPATIAL_BLOCKS)
    ok1 = (i0 + 1 >= 0) & (i0 + 1 < _SPATIAL_BLOCKS)
    axis[rows[ok0], i0[ok0]] = 1.0 - w1[ok0]
    axis[rows[ok1], i0[ok1] + 1] = w1[ok1]
    # outer product over rows and columns -> (ps, ps, 4, 4)
    full = axis[:, None, :, None] * axis[None, :, None, :]
    return full.reshape(patch_size * patch_size, _SPATIAL_BLOCKS * _SPATIAL_BLOCKS)


def extract_descriptors(image: Image, cfg: PatchGridConfig = PatchGridConfig()) -> DescriptorGrid:
    """Tile an image into patches and describe each one.

    Per patch: Gaussian smoothing (sigma = 1/8 patch size, reflected
    inside the patch), central-difference gradients, and a gradient
    histogram whose magnitude contributions are soft-assigned bilinearly
    across 4x4 spatial sub-blocks and linearly across 8 orientation bins,
    L2-normalized. Each descriptor depends only on the pixels inside its
    own footprint; patches whose total squared gradient energy falls
    below 1e-6 get the zero vector.
    """
    if cfg.descriptor_dim != DESCRIPTOR_DIM:
        raise ValueError(
            f"built-in descriptor emits {DESCRIPTOR_DIM} dims; "
            f"load an external grid for dim {cfg.descriptor_dim}"
        )
    gray = luma(image)
    gw, gh = grid_dims(image.width, image.height, cfg)
    ps = cfg.patch_size
    n = gw * gh

    windows = np.lib.stride_tricks.sliding_window_view(gray, (ps, ps))
    patches = windows[:: cfg.stride, :: cfg.stride].reshape(n, ps, ps).astype(np.float32)
    # Per-axis sigma keeps the filter inside each patch's own footprint.
    smoothed = ndimage.gaussian_filter(patches, sigma=(0.0, ps / 8.0, ps / 8.0), mode="reflect")
    gy = np.gradient(smoothed, axis=1)
    gx = np.gradient(smoothed, axis=2)
    energy = (gx * gx + gy * gy).sum(axis=(1, 2), dtype=np.float64)
    pixels = ps * ps
    mag = np.hypot(gx, gy).reshape(n, pixels)

    ob = (np.arctan2(gy, gx).reshape(n, pixels) + np.float32(np.pi)) / np.float32(
        2.0 * np.pi / _ORIENTATION_BINS
    ) - np.float32(0.5)
    b0 = np.floor(ob)
    wb1 = ob - b0
    b0 = b0.astype(np.int64) % _ORIENTATION_BINS
    b1 = (b0 + 1) % _ORIENTATION_BINS

    # Soft-orientation channels laid out (cell, bin, pixel); a pixel's two
    # bins never collide, so plain scatter assignment is safe.
    channels = np.zeros(n * _ORIENTATION_BINS * pixels, dtype=np.float32)
    base = (
        np.arange(n, dtype=np.int64)[:, None] * (_ORIENTATION_BINS * pixels)
        + np.arange(pixels, dtype=np.int64)[None, :]
    )
    channels[(base + b0 * pixels).ravel()] = (mag * (1.0 - wb1)).ravel()
    channels[(base + b1 * pixels).ravel()] = (mag * wb1).ravel()
    # (n * bins, pixels) x (pixels, blocks) -> block-major histograms
    weights = _spatial_weights(ps).astype(np.float32)
    hist = channels.reshape(n * _ORIENTATION_BINS, pixels) @ weights
    hist = (
        hist.reshape(n, _ORIENTATION_BINS, _SPATIAL_BLOCKS * _SPATIAL_BLOCKS)
        .transpose(0, 2, 1)
        .reshape(n, DESCRIPTOR_DIM)
        .astype(np.float64)
    )
    norms = np.linalg.norm(hist, axis=1)
    keep = (energy >= GRADIENT_ENERGY_EPS) & (norms > 0.0)
    descriptors = np.zeros((n, DESCRIPTOR_DIM), dtype=np.float32)
    descriptors[keep] = (hist[keep] / norms[keep, None]).astype(np.float32)

    k = np.arange(n)
    centers = np.stack(
        [(k % gw) * cfg.stride + ps // 2, (k // gw) * cfg.stride + ps // 2], axis=1
    ).astype(np.int32)
    return DescriptorGrid(gw, gh, DESCRIPTOR_DIM, descriptors, centers)


def descriptor_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance between two descriptors of equal dimension."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"descriptor dims do not match: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


# ---------------------------------------------------------------------------
# ".pdsc" descriptor file format

PDSC_MAGIC = b"PDSC"
PDSC_VERSION = 1
_PDSC_HEADER = struct.Struct("<4sIIII")


def save_pdsc(path, grid: DescriptorGrid) -> None:
    if grid.cell_count and (grid.centers.min() < 0 or grid.centers.max() > 0xFFFF):
        raise ValueError("patch centers do not fit u16 coordinates")
    header = _PDSC_HEADER.pack(PDSC_MAGIC, PDSC_VERSION, grid.grid_w, grid.grid_h, grid.dim)
    desc = np.ascontiguousarray(grid.descriptors, dtype="<f4").tobytes()
    centers = np.ascontiguousarray(grid.centers, dtype="<u2").tobytes()
    Path(path).write_bytes(header + desc + centers)


def load_pdsc(path) -> DescriptorGrid:
    blob = Path(path).read_bytes()
    if len(blob) < _PDSC_HEADER.size:
        raise FormatError(f"{path}: truncated header at byte {len(blob)}, need {_PDSC_HEADER.size}")
    magic, version, gw, gh, dim = _PDSC_HEADER.unpack_from(blob, 0)
    if magic != PDSC_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte 0, expected {PDSC_MAGIC!r}")
    if version != PDSC_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 4")
    n = gw * gh
    desc_bytes = n * dim * 4
    need = _PDSC_HEADER.size + desc_bytes + n * 4
    if len(blob) != need:
        raise FormatError(f"{path}: payload ends at byte {len(blob)}, expected {need} bytes")
    desc = np.frombuffer(blob, dtype="<f4", count=n * dim, offset=_PDSC_HEADER.size)
    centers = np.frombuffer(blob, dtype="<u2", count=n * 2, offset=_PDSC_HEADER.size + desc_bytes)
    return DescriptorGrid(
        gw, gh, dim, desc.reshape(n, dim), centers.reshape(n, 2).astype(np.int32)
    )

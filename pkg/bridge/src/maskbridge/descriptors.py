"""Neural patch descriptors aligned to the pipeline's patch grid.

The default encoder is a small convolutional network with deterministic,
seed-derived weights: it runs anywhere without a weights download and its
features are stable content signatures, though obviously not trained
ones. A TorchScript model exported from a real descriptor network can be
supplied instead with ``--model torchscript --weights file.pt``; it must
map a (1, 1, H, W) image in [0, 1] to a (1, C, H', W') feature tensor.
"""

import logging
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .formats import FrameEntry, load_gray, write_pdsc

log = logging.getLogger("maskbridge.descriptors")

DESCRIPTOR_DIM = 128


class MissingWeightsError(RuntimeError):
    pass


def seeded_cnn(seed: int) -> torch.nn.Module:
    torch.manual_seed(seed)
    model = torch.nn.Sequential(
        torch.nn.Conv2d(1, 16, 5, stride=2, padding=2),
        torch.nn.ReLU(),
        torch.nn.Conv2d(16, 32, 3, stride=2, padding=1),
        torch.nn.ReLU(),
        torch.nn.Conv2d(32, 64, 3, stride=2, padding=1),
        torch.nn.ReLU(),
        torch.nn.Conv2d(64, DESCRIPTOR_DIM, 3, stride=1, padding=1),
    )
    model.eval()
    return model


def load_model(name: str, weights: str | None, seed: int, device: str) -> torch.nn.Module:
    if name == "seeded-cnn":
        model = seeded_cnn(seed)
    elif name == "torchscript":
        if not weights or not Path(weights).is_file():
            raise MissingWeightsError(
                f"model weights not found: {weights!r} (pass --weights to a TorchScript file)"
            )
        model = torch.jit.load(weights, map_location=device)
        model.eval()
    else:
        raise ValueError(f"unknown descriptor model {name!r}")
    return model.to(device)


def patch_grid(width: int, height: int, patch: int, stride: int):
    if width < patch or height < patch:
        raise ValueError(f"frame {width}x{height} smaller than one {patch}px patch")
    gw = (width - patch) // stride + 1
    gh = (height - patch) // stride + 1
    k = np.arange(gw * gh)
    centers = np.stack([(k % gw) * stride + patch // 2, (k // gw) * stride + patch // 2], axis=1)
    return gw, gh, centers.astype(np.int64)


@torch.no_grad()
def describe_frame(
    model: torch.nn.Module, gray: np.ndarray, patch: int, stride: int, device: str
) -> tuple[int, int, np.ndarray, np.ndarray]:
    """Run the encoder once and sample features at every patch center."""
    h, w = gray.shape
    gw, gh, centers = patch_grid(w, h, patch, stride)
    tensor = torch.from_numpy(gray).float().reshape(1, 1, h, w).to(device)
    fmap = model(tensor)
    if fmap.ndim != 4:
        raise ValueError(f"model produced a {fmap.ndim}-d tensor, expected (1, C, H', W')")

    # Sample the feature map at the patch centers (align_corners=False
    # treats pixel centers at half-integer offsets).
    xs = (centers[:, 0] + 0.5) / w * 2.0 - 1.0
    ys = (centers[:, 1] + 0.5) / h * 2.0 - 1.0
    grid = torch.from_numpy(np.stack([xs, ys], axis=1)).float().reshape(1, 1, -1, 2).to(device)
    sampled = F.grid_sample(fmap, grid, mode="bilinear", align_corners=False)
    features = sampled[0, :, 0, :].transpose(0, 1).cpu().numpy()

    if features.shape[1] != DESCRIPTOR_DIM:
        # Project to the pipeline's descriptor width with a fixed seeded map.
        rng = np.random.default_rng(0)
        projection = rng.standard_normal((features.shape[1], DESCRIPTOR_DIM)) / np.sqrt(
            features.shape[1]
        )
        features = features @ projection
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    descriptors = np.where(norms > 1e-12, features / np.maximum(norms, 1e-12), 0.0)
    return gw, gh, descriptors.astype(np.float32), centers.astype(np.uint16)


def export_scene_descriptors(
    scene_dir: Path,
    entries: list[FrameEntry],
    model: torch.nn.Module,
    out_dir: Path,
    patch: int,
    stride: int,
    device: str,
) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = 0
    for entry in entries:
        gray = load_gray(entry.path)
        gw, gh, descriptors, centers = describe_frame(model, gray, patch, stride, device)
        write_pdsc(out_dir / f"{entry.frame_id}.pdsc", gw, gh, descriptors, centers)
        written += 1
    log.info("%s: wrote %d descriptor grids", scene_dir.name, written)
    return written

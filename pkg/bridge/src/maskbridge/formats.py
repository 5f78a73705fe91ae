"""File-level interface to the detection pipeline.

The bridge talks to the pipeline exclusively through its documented file
formats (manifest.json, .pdsc, .flow) and CLI, so this module carries its
own readers and writers for those byte layouts.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PDSC_HEADER = struct.Struct("<4sIIII")
FLOW_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class FrameEntry:
    frame_id: str
    path: Path
    role: str


def load_manifest(path) -> tuple[dict, list[FrameEntry]]:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    entries = [
        FrameEntry(str(e["frame_id"]), path.parent / e["path"], str(e["role"]))
        for e in doc["entries"]
    ]
    return doc, entries


def scene_dirs(corpus_dir) -> list[Path]:
    corpus_dir = Path(corpus_dir)
    if (corpus_dir / "manifest.json").is_file():
        return [corpus_dir]
    dirs = sorted(p for p in corpus_dir.iterdir() if (p / "manifest.json").is_file())
    if not dirs:
        raise FileNotFoundError(f"no manifest.json found under {corpus_dir}")
    return dirs


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:2] != b"P5":
        raise ValueError(f"{path}: not a binary PGM file")
    pos = 2
    fields = []
    while len(fields) < 3:
        while blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(blob[start:pos]))
    pos += 1
    width, height, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: expected maxval 255, got {maxval}")
    data = np.frombuffer(blob, dtype=np.uint8, count=width * height, offset=pos)
    return data.reshape(height, width)


def load_gray(path) -> np.ndarray:
    """Frame as float32 grayscale in [0, 1]."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm(path).astype(np.float32) / 255.0
    import cv2

    img = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if img is None:
        raise ValueError(f"could not read image: {path}")
    return img.astype(np.float32) / 255.0


def write_pdsc(path, grid_w: int, grid_h: int, descriptors: np.ndarray, centers: np.ndarray) -> None:
    descriptors = np.ascontiguousarray(descriptors, dtype="<f4")
    centers = np.ascontiguousarray(centers, dtype="<u2")
    n, dim = descriptors.shape
    if n != grid_w * grid_h or centers.shape != (n, 2):
        raise ValueError("descriptor or center count does not match the grid")
    header = PDSC_HEADER.pack(b"PDSC", 1, grid_w, grid_h, dim)
    Path(path).write_bytes(header + descriptors.tobytes() + centers.tobytes())


def read_pdsc(path) -> tuple[int, int, np.ndarray, np.ndarray]:
    blob = Path(path).read_bytes()
    magic, version, gw, gh, dim = PDSC_HEADER.unpack_from(blob, 0)
    if magic != b"PDSC" or version != 1:
        raise ValueError(f"{path}: bad descriptor file header")
    n = gw * gh
    desc = np.frombuffer(blob, dtype="<f4", count=n * dim, offset=PDSC_HEADER.size)
    centers = np.frombuffer(blob, dtype="<u2", count=n * 2, offset=PDSC_HEADER.size + n * dim * 4)
    return gw, gh, desc.reshape(n, dim), centers.reshape(n, 2)


def write_flow(path, displacement: np.ndarray, uncertainty: np.ndarray) -> None:
    displacement = np.ascontiguousarray(displacement, dtype="<f4")
    uncertainty = np.ascontiguousarray(uncertainty, dtype="<f4")
    h, w, two = displacement.shape
    if two != 2 or uncertainty.shape != (h, w):
        raise ValueError("displacement must be HxWx2 with a matching HxW uncertainty plane")
    if float(uncertainty.min()) < 0.0 or float(uncertainty.max()) > 1.0:
        raise ValueError("uncertainty must be normalized to [0, 1] before writing")
    header = FLOW_HEADER.pack(b"FLO1", 1, w, h)
    Path(path).write_bytes(header + displacement.tobytes() + uncertainty.tobytes())


def read_flow(path) -> tuple[np.ndarray, np.ndarray]:
    blob = Path(path).read_bytes()
    magic, version, w, h = FLOW_HEADER.unpack_from(blob, 0)
    if magic != b"FLO1" or version != 1:
        raise ValueError(f"{path}: bad flow file header")
    n = w * h
    disp = np.frombuffer(blob, dtype="<f4", count=n * 2, offset=FLOW_HEADER.size)
    unc = np.frombuffer(blob, dtype="<f4", count=n, offset=FLOW_HEADER.size + n * 8)
    return disp.reshape(h, w, 2), unc.reshape(h, w)

"""Corpus manifests, viewpoint pairing, synthetic scenes, and metrics.

A corpus is a set of scene directories, each holding one live frame, a
reference sequence from a prior traversal, a ground-truth change mask for
the live frame (``gt_<frame_id>.pgm`` next to the images), and a
``manifest.json`` describing frames, roles, and planar poses.

The synthetic generator builds textured indoor-like backgrounds, renders
jittered viewpoints of them, and plants small high-contrast objects into
the live frame with exact pixel-level ground truth.

Evaluation is pixel-wise precision / recall / F1, micro-averaged: counts
are pooled over all pixels of all images before the ratios are formed.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from .imaging import BinaryMask, Image, Pose, bilinear_sample, read_image, write_image, write_mask

log = logging.getLogger("maskpipe.dataset_eval")

ROLES = ("live", "reference")
PAIRING_ANGLE_DEG = 1.0


# ---------------------------------------------------------------------------
# Manifests


@dataclass(frozen=True)
class ManifestEntry:
    frame_id: str
    path: str
    role: str
    pose: Pose

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")


@dataclass(frozen=True)
class Manifest:
    name: str
    width: int
    height: int
    seed: int
    entries: tuple[ManifestEntry, ...]
    root: Path | None = None

    def __post_init__(self):
        ids = [e.frame_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate frame_ids in manifest {self.name!r}")
        object.__setattr__(self, "entries", tuple(self.entries))

    def lives(self) -> list[ManifestEntry]:
        return [e for e in self.entries if e.role == "live"]

    def references(self) -> list[ManifestEntry]:
        return [e for e in self.entries if e.role == "reference"]

    def resolve(self, relative: str) -> Path:
        if self.root is None:
            raise ValueError("manifest has no root directory; load it from disk first")
        return self.root / relative

    def load_frame(self, entry: ManifestEntry) -> Image:
        return read_image(self.resolve(entry.path), frame_id=entry.frame_id, pose=entry.pose)

    def gt_path(self, entry: ManifestEntry) -> Path:
        return self.resolve(f"gt_{entry.frame_id}.pgm")


def save_manifest(manifest: Manifest, path) -> None:
    doc = {
        "name": manifest.name,
        "width": manifest.width,
        "height": manifest.height,
        "seed": manifest.seed,
        "entries": [
            {
                "frame_id": e.frame_id,
                "path": e.path,
                "role": e.role,
                "pose": {"x": e.pose.x, "y": e.pose.y, "yaw": e.pose.yaw},
            }
            for e in manifest.entries
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_manifest(path) -> Manifest:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    try:
        entries = tuple(
            ManifestEntry(
                frame_id=str(e["frame_id"]),
                path=str(e["path"]),
                role=str(e["role"]),
                pose=Pose(float(e["pose"]["x"]), float(e["pose"]["y"]), float(e["pose"]["yaw"])),
            )
            for e in doc["entries"]
        )
        manifest = Manifest(
            name=str(doc["name"]),
            width=int(doc["width"]),
            height=int(doc["height"]),
            seed=int(doc["seed"]),
            entries=entries,
            root=path.parent,
        )
    except KeyError as exc:
        raise ValueError(f"{path}: manifest is missing field {exc}") from exc
    for entry in manifest.entries:
        frame_path = manifest.resolve(entry.path)
        if not frame_path.is_file():
            raise FileNotFoundError(f"{path}: referenced file does not exist: {frame_path}")
    return manifest


# ---------------------------------------------------------------------------
# Viewpoint pairing


def wrap_angle(deg: float) -> float:
    """Wrap an angle difference to (-180, 180]."""
    wrapped = deg % 360.0
    if wrapped > 180.0:
        wrapped -= 360.0
    return wrapped


def pair_viewpoints(live: Pose, refs: Sequence[tuple[str, Pose]]) -> str:
    """Choose the reference frame for a live viewpoint.

    Among references whose yaw deviates less than 1 degree from the live
    frame, return the one nearest in position; when none qualifies, fall
    back to the position-nearest reference regardless of angle. Ties go to
    the lowest frame_id.
    """
    if not refs:
        raise ValueError("no reference viewpoints to pair with")

    def distance(pose: Pose) -> float:
        return math.hypot(pose.x - live.x, pose.y - live.y)

    candidates = [
        (fid, pose)
        for fid, pose in refs
        if abs(wrap_angle(pose.yaw - live.yaw)) < PAIRING_ANGLE_DEG
    ]
    pool = candidates if candidates else list(refs)
    return min(pool, key=lambda item: (distance(item[1]), item[0]))[0]


# ---------------------------------------------------------------------------
# Synthetic corpus generation


@dataclass(frozen=True)
class SynthConfig:
    width: int = 640
    height: int = 480
    T: int = 10
    margin: int = 40
    noise_cells: tuple[int, ...] = (96, 48)
    noise_weights: tuple[float, ...] = (0.6, 0.4)
    intensity_range: tuple[float, float] = (0.3, 0.7)
    n_rectangles: tuple[int, int] = (2, 4)
    rect_extent: tuple[int, int] = (60, 140)
    rect_delta: tuple[float, float] = (0.18, 0.30)
    n_bars: tuple[int, int] = (8, 13)
    bar_thickness: tuple[int, int] = (8, 20)
    bar_length: tuple[int, int] = (100, 340)
    bar_delta: tuple[float, float] = (0.30, 0.42)
    speckle_per_cell: float = 0.0
    speckle_radius: tuple[float, float] = (1.5, 2.5)
    speckle_delta: tuple[float, float] = (0.08, 0.15)
    rotation_deg: tuple[float, float] = (0.01, 0.05)
    translation_px: tuple[float, float] = (0.8, 1.6)
    brightness_jitter: float = 0.05
    # The reference pass and the live pass get opposite lighting offsets
    # in this range; each view adds a small wobble on top. All offsets
    # stay within brightness_jitter pointwise.
    pass_lighting: tuple[float, float] = (0.028, 0.038)
    view_wobble: float = 0.003
    n_objects: tuple[int, int] = (1, 3)
    object_extent: tuple[int, int] = (8, 40)
    object_contrast: tuple[float, float] = (0.12, 0.30)
    master_blur_sigma: float = 0.0
    meters_per_px: float = 0.01

    def __post_init__(self):
        if self.width < 64 or self.height < 48:
            raise ValueError(f"canvas must be at least 64x48, got {self.width}x{self.height}")
        if self.object_extent[1] >= min(self.width, self.height):
            raise ValueError(
                f"object extent {self.object_extent} does not fit the "
                f"{self.width}x{self.height} canvas"
            )
        if self.T < 0:
            raise ValueError(f"T must be >= 0, got {self.T}")


@dataclass(frozen=True)
class PlantedObject:
    """A planted change. rect: (x, y) top-left with extents (w, h);
    disk: (x, y) center with w == h == diameter."""

    kind: str
    x: float
    y: float
    w: float
    h: float

    def rasterize(self, width: int, height: int) -> np.ndarray:
        ys, xs = np.mgrid[0:height, 0:width]
        if self.kind == "rect":
            return (
                (xs >= self.x)
                & (xs < self.x + self.w)
                & (ys >= self.y)
                & (ys < self.y + self.h)
            )
        if self.kind == "disk":
            r = self.w / 2.0
            return (xs - self.x) ** 2 + (ys - self.y) ** 2 <= r * r
        raise ValueError(f"unknown object kind {self.kind!r}")


@dataclass(frozen=True)
class SynthScene:
    name: str
    live: Image
    refs: tuple[Image, ...]
    ground_truth: BinaryMask
    manifest: Manifest
    objects: tuple[PlantedObject, ...]


def _value_noise(rng: np.random.Generator, height: int, width: int, cfg: SynthConfig) -> np.ndarray:
    out = np.zeros((height, width))
    ys = np.arange(height, dtype=np.float64)
    xs = np.arange(width, dtype=np.float64)
    for cell, weight in zip(cfg.noise_cells, cfg.noise_weights):
        grid = rng.random((height // cell + 2, width // cell + 2))
        gy = ys / cell
        gx = xs / cell
        y0 = gy.astype(np.int64)
        x0 = gx.astype(np.int64)
        wy = (gy - y0)[:, None]
        wx = (gx - x0)[None, :]
        g00 = grid[np.ix_(y0, x0)]
        g01 = grid[np.ix_(y0, x0 + 1)]
        g10 = grid[np.ix_(y0 + 1, x0)]
        g11 = grid[np.ix_(y0 + 1, x0 + 1)]
        out += weight * (
            g00 * (1 - wy) * (1 - wx)
            + g01 * (1 - wy) * wx
            + g10 * wy * (1 - wx)
            + g11 * wy * wx
        )
    lo, hi = out.min(), out.max()
    span = hi - lo if hi > lo else 1.0
    a, b = cfg.intensity_range
    return a + (out - lo) / span * (b - a)


def _make_master(rng: np.random.Generator, cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """Build the shared scene texture plus a fixture mask.

    The fixture mask marks furniture structure (bars and rectangle rims);
    planted objects keep clear of it, like clutter appearing on open floor
    rather than inside shelving.
    """
    height = cfg.height + 2 * cfg.margin
    width = cfg.width + 2 * cfg.margin
    master = _value_noise(rng, height, width, cfg)
    fixtures = np.zeros((height, width), dtype=bool)
    # Fixture counts are calibrated for the default 640x480 canvas and
    # scale with area so small canvases stay mostly open floor.
    density = (cfg.width * cfg.height) / (640.0 * 480.0)
    n_rects = int(round(int(rng.integers(cfg.n_rectangles[0], cfg.n_rectangles[1] + 1)) * density))
    for _ in range(n_rects):
        rw = int(rng.integers(cfg.rect_extent[0], cfg.rect_extent[1] + 1))
        rh = int(rng.integers(cfg.rect_extent[0], cfg.rect_extent[1] + 1))
        x0 = int(rng.integers(0, max(1, width - rw)))
        y0 = int(rng.integers(0, max(1, height - rh)))
        delta = float(rng.uniform(*cfg.rect_delta)) * (1 if rng.random() < 0.5 else -1)
        master[y0 : y0 + rh, x0 : x0 + rw] += delta
        rim = np.zeros((height, width), dtype=bool)
        rim[y0 : y0 + rh, x0 : x0 + rw] = True
        rim[y0 + 4 : y0 + rh - 4, x0 + 4 : x0 + rw - 4] = False
        fixtures |= rim
    # Thin high-contrast bars (shelf edges, rails) whose misalignment
    # ghosts dominate plain differencing.
    n_bars = int(round(int(rng.integers(cfg.n_bars[0], cfg.n_bars[1] + 1)) * density))
    for _ in range(n_bars):
        thickness = int(rng.integers(cfg.bar_thickness[0], cfg.bar_thickness[1] + 1))
        vertical = rng.random() < 0.5
        span = height if vertical else width
        length = min(int(rng.integers(cfg.bar_length[0], cfg.bar_length[1] + 1)), span)
        delta = float(rng.uniform(*cfg.bar_delta)) * (1 if rng.random() < 0.5 else -1)
        # Dense variable-depth notches make every bar segment locally
        # unique, so bar patches never confuse each other across views.
        stripe = np.full(length, delta)
        pos = 0
        while pos < length:
            pos += int(rng.integers(18, 40))
            depth = float(rng.uniform(0.3, 1.0))
            width_n = int(rng.integers(6, 13))
            stripe[pos : pos + width_n] *= 1.0 - depth
            pos += width_n
        if vertical:
            x0 = int(rng.integers(0, max(1, width - thickness)))
            y0 = int(rng.integers(0, max(1, height - length + 1)))
            master[y0 : y0 + length, x0 : x0 + thickness] += stripe[:, None]
            fixtures[y0 : y0 + length, x0 : x0 + thickness] = True
        else:
            x0 = int(rng.integers(0, max(1, width - length + 1)))
            y0 = int(rng.integers(0, max(1, height - thickness)))
            master[y0 : y0 + thickness, x0 : x0 + length] += stripe[None, :]
            fixtures[y0 : y0 + thickness, x0 : x0 + length] = True
    # Speckle dots on a jittered grid make every neighborhood distinctive,
    # so static patches keep wide matching margins across jittered views.
    if cfg.speckle_per_cell > 0:
        ys, xs = np.mgrid[0:height, 0:width]
        pitch = max(4, int(round(np.sqrt(1024.0 / cfg.speckle_per_cell))))
        for gy in range(0, height, pitch):
            for gx in range(0, width, pitch):
                cx = gx + float(rng.uniform(0, pitch))
                cy = gy + float(rng.uniform(0, pitch))
                r = float(rng.uniform(*cfg.speckle_radius))
                delta = float(rng.uniform(*cfg.speckle_delta)) * (1 if rng.random() < 0.5 else -1)
                x_lo, x_hi = max(0, int(cx - r - 1)), min(width, int(cx + r + 2))
                y_lo, y_hi = max(0, int(cy - r - 1)), min(height, int(cy + r + 2))
                if x_lo >= x_hi or y_lo >= y_hi:
                    continue
                window = (xs[y_lo:y_hi, x_lo:x_hi] - cx) ** 2 + (ys[y_lo:y_hi, x_lo:x_hi] - cy) ** 2
                master[y_lo:y_hi, x_lo:x_hi] += np.where(window <= r * r, delta, 0.0)
    if cfg.master_blur_sigma > 0:
        # Defocus-like softening: wide edge ramps survive the detector's
        # box smoothing and patch descriptors tolerate small shifts.
        master = ndimage.gaussian_filter(master, sigma=cfg.master_blur_sigma)
    if fixtures.any():
        fixtures = ndimage.binary_dilation(fixtures, iterations=6)
    return np.clip(master, 0.05, 0.95), fixtures


def _sample_view(
    master: np.ndarray,
    cfg: SynthConfig,
    angle_deg: float,
    tx: float,
    ty: float,
    brightness: float = 0.0,
) -> np.ndarray:
    # View pixel p maps to master position R(p - c) + c + t + margin.
    ys, xs = np.mgrid[0 : cfg.height, 0 : cfg.width]
    cx = (cfg.width - 1) / 2.0
    cy = (cfg.height - 1) / 2.0
    rad = math.radians(angle_deg)
    cos_a, sin_a = math.cos(rad), math.sin(rad)
    mx = cos_a * (xs - cx) - sin_a * (ys - cy) + cx + tx + cfg.margin
    my = sin_a * (xs - cx) + cos_a * (ys - cy) + cy + ty + cfg.margin
    values, inside = bilinear_sample(master, mx, my)
    if not inside.all():
        raise ValueError("view sampling left the master canvas; increase the margin")
    return np.clip(values + brightness, 0.0, 1.0)


def _random_jitter(rng: np.random.Generator, cfg: SynthConfig):
    angle = float(rng.uniform(*cfg.rotation_deg)) * (1 if rng.random() < 0.5 else -1)
    direction = float(rng.uniform(0.0, 2.0 * math.pi))
    magnitude = float(rng.uniform(*cfg.translation_px))
    return angle, magnitude * math.cos(direction), magnitude * math.sin(direction)


def _view_brightness(rng: np.random.Generator, cfg: SynthConfig, pass_offset: float) -> float:
    wobble = float(rng.uniform(-cfg.view_wobble, cfg.view_wobble))
    bound = cfg.brightness_jitter
    return float(np.clip(pass_offset + wobble, -bound, bound))


def _plant_objects(
    rng: np.random.Generator,
    canvas: np.ndarray,
    cfg: SynthConfig,
    keep_out: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, tuple[PlantedObject, ...]]:
    height, width = canvas.shape
    count = int(rng.integers(cfg.n_objects[0], cfg.n_objects[1] + 1))
    occupied = np.zeros((height, width), dtype=bool)
    planted = np.zeros((height, width), dtype=bool)
    if keep_out is not None:
        occupied |= keep_out
    out = canvas.copy()
    objects: list[PlantedObject] = []
    for _ in range(count):
        placed = False
        for _attempt in range(100):
            kind = "rect" if rng.random() < 0.5 else "disk"
            if kind == "rect":
                w = int(rng.integers(cfg.object_extent[0], cfg.object_extent[1] + 1))
                h = int(rng.integers(cfg.object_extent[0], cfg.object_extent[1] + 1))
                x = int(rng.integers(2, width - w - 2))
                y = int(rng.integers(2, height - h - 2))
                obj = PlantedObject("rect", x, y, w, h)
            else:
                d = int(rng.integers(cfg.object_extent[0], cfg.object_extent[1] + 1))
                r = d / 2.0
                cx = float(rng.uniform(2 + r, width - 2 - r))
                cy = float(rng.uniform(2 + r, height - 2 - r))
                obj = PlantedObject("disk", cx, cy, d, d)
            pixels = obj.rasterize(width, height)
            if (pixels & occupied).any():
                continue
            local_mean = float(out[pixels].mean())
            sign = -1.0 if local_mean > 0.5 else 1.0
            contrast = float(rng.uniform(*cfg.object_contrast))
            texture = rng.uniform(-0.04, 0.04, size=int(pixels.sum()))
            out[pixels] = np.clip(local_mean + sign * contrast + texture, 0.0, 1.0)
            occupied |= pixels
            planted |= pixels
            objects.append(obj)
            placed = True
            break
        if not placed:
            raise ValueError(f"object placement infeasible after 100 attempts ({count} objects)")
    return out, planted, tuple(objects)


def synth_scene(seed: int, cfg: SynthConfig = SynthConfig(), name: str = "scene") -> SynthScene:
    """Generate one deterministic scene: 2T+1 references, a live frame with
    planted small objects, exact ground truth, and a manifest whose poses
    are consistent with the viewpoint jitters."""
    rng = np.random.default_rng(seed)
    master, fixtures = _make_master(rng, cfg)
    n_refs = 2 * cfg.T + 1

    # The two traversals happen at different times, so they carry opposite
    # global lighting offsets on top of the per-view wobble.
    light_sign = 1.0 if rng.random() < 0.5 else -1.0
    ref_light = light_sign * float(rng.uniform(*cfg.pass_lighting))
    live_light = -light_sign * float(rng.uniform(*cfg.pass_lighting))

    entries: list[ManifestEntry] = []
    refs: list[Image] = []
    for i in range(n_refs):
        angle, tx, ty = _random_jitter(rng, cfg)
        brightness = _view_brightness(rng, cfg, ref_light)
        pose = Pose(tx * cfg.meters_per_px, ty * cfg.meters_per_px, angle)
        frame_id = f"ref_{i:03d}"
        refs.append(
            Image(_sample_view(master, cfg, angle, tx, ty, brightness), frame_id=frame_id, pose=pose)
        )
        entries.append(ManifestEntry(frame_id, f"{frame_id}.pgm", "reference", pose))

    angle, tx, ty = _random_jitter(rng, cfg)
    live_canvas = _sample_view(master, cfg, angle, tx, ty, _view_brightness(rng, cfg, live_light))
    keep_out = fixtures[cfg.margin : cfg.margin + cfg.height, cfg.margin : cfg.margin + cfg.width]
    live_canvas, gt_pixels, objects = _plant_objects(rng, live_canvas, cfg, keep_out)
    live_pose = Pose(tx * cfg.meters_per_px, ty * cfg.meters_per_px, angle)
    live = Image(live_canvas, frame_id="live_000", pose=live_pose)
    entries.append(ManifestEntry("live_000", "live_000.pgm", "live", live_pose))

    manifest = Manifest(name=name, width=cfg.width, height=cfg.height, seed=seed, entries=entries)
    return SynthScene(
        name=name,
        live=live,
        refs=tuple(refs),
        ground_truth=BinaryMask(gt_pixels.astype(np.uint8)),
        manifest=manifest,
        objects=objects,
    )


def write_scene(scene: SynthScene, scene_dir) -> Path:
    scene_dir = Path(scene_dir)
    scene_dir.mkdir(parents=True, exist_ok=True)
    for image in (*scene.refs, scene.live):
        write_image(scene_dir / f"{image.frame_id}.pgm", image)
    write_mask(scene_dir / f"gt_{scene.live.frame_id}.pgm", scene.ground_truth)
    save_manifest(scene.manifest, scene_dir / "manifest.json")
    return scene_dir


def make_corpus(out_dir, n_scenes: int, seed: int, cfg: SynthConfig = SynthConfig()) -> list[Path]:
    """Write ``n_scenes`` scene directories under out_dir, one seed apart."""
    if n_scenes < 1:
        raise ValueError(f"n_scenes must be >= 1, got {n_scenes}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dirs = []
    for i in range(n_scenes):
        name = f"scene_{i:04d}"
        scene = synth_scene(seed + i, cfg, name=name)
        dirs.append(write_scene(scene, out_dir / name))
        log.debug("wrote scene %s", name)
    return dirs


def corpus_scene_dirs(corpus_dir) -> list[Path]:
    corpus_dir = Path(corpus_dir)
    if (corpus_dir / "manifest.json").is_file():
        return [corpus_dir]
    dirs = sorted(p for p in corpus_dir.iterdir() if (p / "manifest.json").is_file())
    if not dirs:
        raise FileNotFoundError(f"no manifest.json found under {corpus_dir}")
    return dirs


# ---------------------------------------------------------------------------
# Pixel-wise evaluation


@dataclass(frozen=True)
class ReportRow:
    scope: str  # "corpus" or a frame_id
    threshold: float
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class EvalReport:
    """Precision / recall / F1 rows per threshold, corpus scope first."""

    rows: tuple[ReportRow, ...]
    best_threshold: float
    best_f1: float

    def corpus_rows(self) -> list[ReportRow]:
        return [r for r in self.rows if r.scope == "corpus"]


def pixel_counts(pred: BinaryMask, gt: BinaryMask) -> tuple[int, int, int]:
    """(TP, FP, FN) over the pixels of one prediction/ground-truth pair."""
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise ValueError(
            f"prediction {pred.width}x{pred.height} does not match "
            f"ground truth {gt.width}x{gt.height}"
        )
    p = pred.data.astype(bool)
    g = gt.data.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return tp, fp, fn


def precision_recall_f1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def report_from_counts(
    thresholds: Sequence[float],
    per_image: Sequence[tuple[str, np.ndarray]],
) -> EvalReport:
    """Build a report from per-image (n_thresholds, 3) TP/FP/FN count arrays."""
    thresholds = list(thresholds)
    counts = np.array([c for _, c in per_image], dtype=np.int64)
    if counts.shape[1:] != (len(thresholds), 3):
        raise ValueError(f"count arrays must be (n_thresholds, 3), got {counts.shape[1:]}")
    pooled = counts.sum(axis=0)

    rows: list[ReportRow] = []
    best = (0.0, thresholds[0] if thresholds else 0.0)
    for k, tau in enumerate(thresholds):
        p, r, f1 = precision_recall_f1(*pooled[k])
        rows.append(ReportRow("corpus", tau, p, r, f1))
        if f1 > best[0] + 1e-12:
            best = (f1, tau)
    for frame_id, image_counts in per_image:
        for k, tau in enumerate(thresholds):
            p, r, f1 = precision_recall_f1(*image_counts[k])
            rows.append(ReportRow(frame_id, tau, p, r, f1))
    return EvalReport(tuple(rows), best_threshold=best[1], best_f1=best[0])


def evaluate(
    pred_by_threshold: Mapping[float, Sequence[BinaryMask]],
    gt_masks: Sequence[BinaryMask],
    frame_ids: Sequence[str],
) -> EvalReport:
    """Micro-averaged evaluation of thresholded predictions.

    ``pred_by_threshold`` maps each swept threshold to one prediction per
    image, aligned with ``gt_masks`` and ``frame_ids``.
    """
    thresholds = sorted(pred_by_threshold)
    per_image = []
    for idx, frame_id in enumerate(frame_ids):
        arr = np.zeros((len(thresholds), 3), dtype=np.int64)
        for k, tau in enumerate(thresholds):
            preds = pred_by_threshold[tau]
            if len(preds) != len(gt_masks):
                raise ValueError(
                    f"{len(preds)} predictions for threshold {tau} but {len(gt_masks)} ground truths"
                )
            arr[k] = pixel_counts(preds[idx], gt_masks[idx])
        per_image.append((frame_id, arr))
    return report_from_counts(thresholds, per_image)


def write_report_csv(report: EvalReport, path) -> None:
    """CSV with columns threshold, precision, recall, f1.

    Corpus rows come first (ascending threshold), then one block per image
    in evaluation order. The JSON sidecar written next to it carries the
    scope labels and the best threshold explicitly.
    """
    lines = ["threshold,precision,recall,f1"]
    for row in report.rows:
        lines.append(f"{row.threshold:.6g},{row.precision:.6f},{row.recall:.6f},{row.f1:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_report_json(report: EvalReport, path) -> None:
    doc = {
        "best_threshold": report.best_threshold,
        "best_f1": report.best_f1,
        "rows": [
            {
                "scope": r.scope,
                "threshold": r.threshold,
                "precision": r.precision,
                "recall": r.recall,
                "f1": r.f1,
            }
            for r in report.rows
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")

"""Figure rendering for inspection: overlay panels and report curves."""

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .dataset_eval import EvalReport, load_manifest
from .imaging import BinaryMask, load_score_fmap, read_image, read_mask, resize_nearest

log = logging.getLogger("maskpipe.render")


def _gray_to_rgb(data: np.ndarray) -> np.ndarray:
    if data.ndim == 3 and data.shape[2] == 3:
        return data
    plane = data[:, :, 0] if data.ndim == 3 else data
    return np.stack([plane, plane, plane], axis=2)


def _mask_overlay(live_rgb: np.ndarray, mask: BinaryMask) -> np.ndarray:
    # Tint unverified (mask = 0) cells red over the live image.
    out = live_rgb.copy()
    hot = mask.data == 0
    out[hot, 0] = 0.55 * out[hot, 0] + 0.45
    out[hot, 1] = 0.55 * out[hot, 1]
    out[hot, 2] = 0.55 * out[hot, 2]
    return out


def render_overlay(scene_dir, results_dir, out_path, frame_id: str | None = None) -> Path:
    """Write a five-panel PNG: live, warped reference, mask overlay,
    score heat, ground truth. Every panel is at canvas resolution."""
    scene_dir = Path(scene_dir)
    results_dir = Path(results_dir)
    manifest = load_manifest(scene_dir / "manifest.json")
    lives = manifest.lives()
    if frame_id is not None:
        lives = [e for e in lives if e.frame_id == frame_id]
        if not lives:
            raise ValueError(f"no live frame {frame_id!r} in {scene_dir}")
    live_entry = lives[0]
    prefix = "" if len(manifest.lives()) == 1 else f"{live_entry.frame_id}_"

    live = manifest.load_frame(live_entry)
    score_path = results_dir / f"{prefix}score.fmap"
    warped_path = results_dir / f"{prefix}warped.pgm"
    for required in (score_path, warped_path):
        if not required.is_file():
            raise FileNotFoundError(f"missing detection result: {required}")
    score = load_score_fmap(score_path)
    warped = read_image(warped_path)
    gt_path = manifest.gt_path(live_entry)
    if not gt_path.is_file():
        raise FileNotFoundError(f"missing ground truth mask: {gt_path}")
    gt = read_mask(gt_path)

    mask_path = results_dir / f"{prefix}mask.pgm"
    if mask_path.is_file():
        mask = resize_nearest(read_mask(mask_path), live.width, live.height)
    else:
        mask = BinaryMask(np.ones((live.height, live.width), dtype=np.uint8))
        log.info("no mask in %s, overlay panel shows all cells verified", results_dir)

    live_rgb = _gray_to_rgb(live.data.astype(np.float64))
    heat = matplotlib.colormaps["magma"](score.data.astype(np.float64))[:, :, :3]
    panels = [
        live_rgb,
        _gray_to_rgb(warped.data.astype(np.float64)),
        _mask_overlay(live_rgb, mask),
        heat,
        _gray_to_rgb(gt.data.astype(np.float64)),
    ]
    composite = np.clip(np.concatenate(panels, axis=1), 0.0, 1.0)

    out_path = Path(out_path)
    height, width = composite.shape[:2]
    fig = plt.figure(figsize=(width / 100.0, height / 100.0), dpi=100, frameon=False)
    ax = fig.add_axes([0.0, 0.0, 1.0, 1.0])
    ax.imshow(composite, interpolation="nearest")
    ax.set_axis_off()
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    return out_path


def render_report_figure(report: EvalReport, out_path) -> Path:
    """Plot corpus precision / recall / F1 against the swept threshold."""
    rows = report.corpus_rows()
    taus = [r.threshold for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(taus, [r.precision for r in rows], label="precision")
    ax.plot(taus, [r.recall for r in rows], label="recall")
    ax.plot(taus, [r.f1 for r in rows], label="f1", linewidth=2)
    ax.axvline(report.best_threshold, color="gray", linestyle=":", linewidth=1)
    ax.annotate(
        f"best F1 {report.best_f1:.3f}",
        (report.best_threshold, report.best_f1),
        textcoords="offset points",
        xytext=(6, 6),
        fontsize=9,
    )
    ax.set_xlabel("decision threshold")
    ax.set_ylabel("score")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="best")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path

"""End-to-end batch runs over a corpus.

For every live frame: pick the paired reference by pose, generate the
attention mask over the reference window, align the paired reference
(external ".flow" when present, otherwise a fallback flow from the
verified homography), score differences, gate with the mask, merge warp
uncertainty, and sweep decision thresholds against ground truth.

Per-scene artifacts land in ``<out>/<scene>/`` (score.fmap, score.pgm,
warped.pgm, validity.pgm, mask.pgm); the corpus-level report lands in
``<out>/report.csv`` plus a labeled JSON sidecar.

External inputs are discovered by convention inside each scene directory:
``pdsc/<frame_id>.pdsc`` descriptor grids and
``flow/<live_id>__<ref_id>.flow`` dense flow for the paired frames.

The uncertainty merge runs only when an external flow supplies a learned
per-pixel plane. The fallback flow's plane is a binary out-of-bounds
indicator that is zero at every valid pixel, so multiplying it in would
erase the entire in-bounds score; out-of-bounds pixels are already zeroed
by the difference scorer.
"""

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attention_mask import MaskGenConfig, frame_seed, generate_attention_mask
from .dataset_eval import (
    EvalReport,
    Manifest,
    ManifestEntry,
    corpus_scene_dirs,
    load_manifest,
    pair_viewpoints,
    report_from_counts,
)
from .detection import DetectConfig, difference_map, gate_with_mask, merge_uncertainty
from .geometry import RansacConfig, estimate_homography_ransac, mutual_nearest_neighbors
from .imaging import (
    BinaryMask,
    Image,
    read_mask,
    resize_nearest,
    save_score_fmap,
    write_image,
    write_mask,
    write_score_pgm,
)
from .patch_features import DescriptorGrid, extract_descriptors, load_pdsc
from .warping import flow_from_homography, identity_flow, load_flow, warp_reference

log = logging.getLogger("maskpipe.pipeline")

DEFAULT_THRESHOLDS = tuple(np.round(np.arange(0.01, 0.6001, 0.01), 6).tolist())


@dataclass(frozen=True)
class DetectOptions:
    mask_cfg: MaskGenConfig = field(default_factory=MaskGenConfig)
    detect_cfg: DetectConfig = field(default_factory=DetectConfig)
    use_warp: bool = True
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    jobs: int = 1


@dataclass(frozen=True)
class SceneOutcome:
    scene: str
    frame_id: str
    paired_ref: str
    counts: np.ndarray  # (n_thresholds, 3) TP/FP/FN
    mask_ones: int
    used_external_flow: bool


def select_window(refs: list[ManifestEntry], T: int) -> list[ManifestEntry]:
    """Centered slice of at most 2T+1 reference frames, in manifest order.

    Manifest order is temporal, so shrinking T keeps a nested window and
    mask one-counts stay monotone in T.
    """
    k = min(len(refs), 2 * T + 1)
    start = (len(refs) - k) // 2
    return refs[start : start + k]


def _external_descriptors(scene_dir: Path, manifest: Manifest) -> dict[str, DescriptorGrid]:
    grids: dict[str, DescriptorGrid] = {}
    pdsc_dir = scene_dir / "pdsc"
    if not pdsc_dir.is_dir():
        return grids
    for entry in manifest.entries:
        path = pdsc_dir / f"{entry.frame_id}.pdsc"
        if path.is_file():
            grids[entry.frame_id] = load_pdsc(path)
    return grids


def _paired_model(
    live: Image,
    paired: Image,
    opts: DetectOptions,
    descriptors: dict[str, DescriptorGrid],
    details,
):
    if details is not None and paired.frame_id in details:
        return details[paired.frame_id]

    def grid_for(image: Image) -> DescriptorGrid:
        if image.frame_id in descriptors:
            return descriptors[image.frame_id]
        return extract_descriptors(image, opts.mask_cfg.patch)

    matches = mutual_nearest_neighbors(grid_for(live), grid_for(paired))
    cfg = RansacConfig(
        reproj_threshold=opts.mask_cfg.ransac.reproj_threshold,
        max_iterations=opts.mask_cfg.ransac.max_iterations,
        confidence=opts.mask_cfg.ransac.confidence,
        min_inliers=opts.mask_cfg.ransac.min_inliers,
        rng_seed=frame_seed(opts.mask_cfg.ransac.rng_seed, paired.frame_id),
    )
    return estimate_homography_ransac(matches, cfg)


def _sweep_counts(score_data: np.ndarray, gt: BinaryMask, thresholds) -> np.ndarray:
    g = gt.data.astype(bool)
    counts = np.zeros((len(thresholds), 3), dtype=np.int64)
    for k, tau in enumerate(thresholds):
        p = score_data >= tau
        counts[k, 0] = np.count_nonzero(p & g)
        counts[k, 1] = np.count_nonzero(p & ~g)
        counts[k, 2] = np.count_nonzero(~p & g)
    return counts


def process_scene(scene_dir, out_dir, opts: DetectOptions) -> list[SceneOutcome]:
    """Run detection for every live frame of one scene directory."""
    scene_dir = Path(scene_dir)
    manifest = load_manifest(scene_dir / "manifest.json")
    refs = manifest.references()
    lives = manifest.lives()
    if not refs:
        raise ValueError(f"{scene_dir}: manifest has no reference frames")
    if not lives:
        raise ValueError(f"{scene_dir}: manifest has no live frames")

    scene_out = Path(out_dir) / manifest.name
    scene_out.mkdir(parents=True, exist_ok=True)
    descriptors = _external_descriptors(scene_dir, manifest)
    window_entries = select_window(refs, opts.mask_cfg.T)
    window_images = [manifest.load_frame(e) for e in window_entries]
    by_id = {img.frame_id: img for img in window_images}

    outcomes = []
    for live_entry in lives:
        live = manifest.load_frame(live_entry)
        paired_id = pair_viewpoints(live_entry.pose, [(e.frame_id, e.pose) for e in refs])
        paired_entry = next(e for e in refs if e.frame_id == paired_id)
        paired = by_id.get(paired_id) or manifest.load_frame(paired_entry)

        need_mask = opts.detect_cfg.gate_mode != "off"
        mask = None
        details = None
        if need_mask:
            mask, details = generate_attention_mask(
                live, window_images, opts.mask_cfg, descriptors or None, return_details=True
            )

        flow = None
        used_external_flow = False
        if opts.use_warp:
            flow_path = scene_dir / "flow" / f"{live.frame_id}__{paired_id}.flow"
            if flow_path.is_file():
                flow = load_flow(flow_path)
                if (flow.height, flow.width) != (live.height, live.width):
                    raise ValueError(
                        f"{flow_path}: flow dims {flow.width}x{flow.height} do not "
                        f"match canvas {live.width}x{live.height}"
                    )
                used_external_flow = True
            else:
                model = _paired_model(live, paired, opts, descriptors, details)
                if model.degenerate:
                    log.warning(
                        "%s/%s: paired frame %s failed verification, warping with identity",
                        manifest.name,
                        live.frame_id,
                        paired_id,
                    )
                    flow = identity_flow(live.width, live.height)
                else:
                    flow = flow_from_homography(model.model, live.width, live.height)
            warped, validity = warp_reference(paired, flow)
        else:
            warped = paired
            validity = BinaryMask(np.ones((live.height, live.width), dtype=np.uint8))

        score = difference_map(live, warped, validity, opts.detect_cfg)
        if need_mask:
            mask_px = resize_nearest(mask, live.width, live.height)
            score = gate_with_mask(score, mask_px, opts.detect_cfg.gate_mode)
        if opts.detect_cfg.use_uncertainty and used_external_flow:
            plane = np.maximum(flow.uncertainty, (1 - validity.data).astype(np.float32))
            score = merge_uncertainty(score, plane)

        prefix = "" if len(lives) == 1 else f"{live.frame_id}_"
        save_score_fmap(scene_out / f"{prefix}score.fmap", score)
        write_score_pgm(scene_out / f"{prefix}score.pgm", score)
        write_image(scene_out / f"{prefix}warped.pgm", warped)
        write_mask(scene_out / f"{prefix}validity.pgm", validity)
        if mask is not None:
            write_mask(scene_out / f"{prefix}mask.pgm", mask)

        gt_path = manifest.gt_path(live_entry)
        if not gt_path.is_file():
            raise FileNotFoundError(f"missing ground truth mask: {gt_path}")
        counts = _sweep_counts(score.data, read_mask(gt_path), opts.thresholds)
        outcomes.append(
            SceneOutcome(
                scene=manifest.name,
                frame_id=live.frame_id,
                paired_ref=paired_id,
                counts=counts,
                mask_ones=mask.count_ones() if mask is not None else -1,
                used_external_flow=used_external_flow,
            )
        )
    return outcomes


def _scene_task(args) -> list[SceneOutcome]:
    scene_dir, out_dir, opts = args
    return process_scene(scene_dir, out_dir, opts)


def run_detect(corpus_dir, out_dir, opts: DetectOptions) -> EvalReport:
    """Detect over every scene of a corpus and write the pooled report."""
    scene_dirs = corpus_scene_dirs(corpus_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(d, out_dir, opts) for d in scene_dirs]
    if opts.jobs > 1:
        with ProcessPoolExecutor(max_workers=opts.jobs) as pool:
            nested = list(pool.map(_scene_task, tasks))
    else:
        nested = [_scene_task(t) for t in tasks]
    outcomes = [o for group in nested for o in group]

    report = report_from_counts(
        list(opts.thresholds),
        [(f"{o.scene}/{o.frame_id}", o.counts) for o in outcomes],
    )
    from .dataset_eval import write_report_csv, write_report_json

    write_report_csv(report, out_dir / "report.csv")
    write_report_json(report, out_dir / "report.json")
    _write_run_summary(out_dir / "run.json", outcomes)
    log.info(
        "detect finished: %d frames, best F1 %.4f at threshold %.3g",
        len(outcomes),
        report.best_f1,
        report.best_threshold,
    )
    return report


def _write_run_summary(path: Path, outcomes: list[SceneOutcome]) -> None:
    doc = [
        {
            "scene": o.scene,
            "frame_id": o.frame_id,
            "paired_ref": o.paired_ref,
            "mask_ones": o.mask_ones,
            "used_external_flow": o.used_external_flow,
        }
        for o in outcomes
    ]
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def run_pair(corpus_dir) -> dict[str, dict[str, str]]:
    """Pair every live frame of every scene with its reference frame."""
    pairs: dict[str, dict[str, str]] = {}
    for scene_dir in corpus_scene_dirs(corpus_dir):
        manifest = load_manifest(scene_dir / "manifest.json")
        refs = [(e.frame_id, e.pose) for e in manifest.references()]
        pairs[manifest.name] = {
            live.frame_id: pair_viewpoints(live.pose, refs) for live in manifest.lives()
        }
    return pairs


def run_mask(corpus_dir, out_dir, opts: DetectOptions) -> dict[str, int]:
    """Generate and persist attention masks for every live frame."""
    ones: dict[str, int] = {}
    out_dir = Path(out_dir)
    for scene_dir in corpus_scene_dirs(corpus_dir):
        manifest = load_manifest(scene_dir / "manifest.json")
        refs = manifest.references()
        if not refs:
            raise ValueError(f"{scene_dir}: manifest has no reference frames")
        descriptors = _external_descriptors(scene_dir, manifest)
        window = [manifest.load_frame(e) for e in select_window(refs, opts.mask_cfg.T)]
        scene_out = out_dir / manifest.name
        scene_out.mkdir(parents=True, exist_ok=True)
        for live_entry in manifest.lives():
            live = manifest.load_frame(live_entry)
            mask = generate_attention_mask(live, window, opts.mask_cfg, descriptors or None)
            prefix = "" if len(manifest.lives()) == 1 else f"{live.frame_id}_"
            write_mask(scene_out / f"{prefix}mask.pgm", mask)
            ones[f"{manifest.name}/{live.frame_id}"] = mask.count_ones()
    return ones

"""Batch command-line front end.

Subcommands: synth, pair, mask, detect, eval, render. Exit codes: 0 on
success, 1 for I/O or data errors, 2 for usage errors. The MASKPIPE_LOG
environment variable sets the log level (DEBUG, INFO, WARNING, ...).
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .attention_mask import MaskGenConfig, apply_mask
from .dataset_eval import SynthConfig, corpus_scene_dirs, load_manifest, make_corpus
from .dataset_eval import report_from_counts, write_report_csv, write_report_json
from .detection import DetectConfig
from .geometry import RansacConfig
from .imaging import load_fmap, read_mask, resize_nearest, save_fmap
from .patch_features import PatchGridConfig
from .pipeline import DEFAULT_THRESHOLDS, DetectOptions, run_detect, run_mask, run_pair

log = logging.getLogger("maskpipe.cli")

_GATE_BY_FLAG = {"matched": "suppress_matched", "unmatched": "suppress_unmatched", "off": "off"}


def _configure_logging() -> None:
    level_name = os.environ.get("MASKPIPE_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _parse_sweep(text: str, parser: argparse.ArgumentParser) -> tuple[float, ...]:
    parts = text.split(":")
    if len(parts) != 3:
        parser.error(f"--threshold-sweep expects start:stop:step, got {text!r}")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        parser.error(f"--threshold-sweep expects numbers, got {text!r}")
    if step <= 0 or start > stop or start < 0.0 or stop > 1.0:
        parser.error(f"--threshold-sweep values out of range: {text!r}")
    taus = np.round(np.arange(start, stop + step / 2.0, step), 9)
    return tuple(float(t) for t in taus)


def _add_pipeline_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--seed", type=int, default=0, help="base RNG seed for verification")
    sp.add_argument("--T", type=int, default=10, help="reference half-window length")
    sp.add_argument("--patch-size", type=int, default=32)
    sp.add_argument("--stride", type=int, default=32)
    sp.add_argument("--ransac-thresh", type=float, default=3.0, help="inlier threshold in pixels")


def _detect_options(args, parser: argparse.ArgumentParser) -> DetectOptions:
    if args.T < 0:
        parser.error("--T must be >= 0")
    try:
        mask_cfg = MaskGenConfig(
            T=args.T,
            patch=PatchGridConfig(patch_size=args.patch_size, stride=args.stride),
            ransac=RansacConfig(reproj_threshold=args.ransac_thresh, rng_seed=args.seed),
        )
        detect_cfg = DetectConfig(
            gate_mode=_GATE_BY_FLAG[getattr(args, "gate", "matched")],
            smoothing_radius=getattr(args, "smoothing_radius", 2),
            use_uncertainty=not getattr(args, "no_uncertainty", False),
        )
    except ValueError as exc:
        parser.error(str(exc))
    sweep = getattr(args, "threshold_sweep", None)
    thresholds = _parse_sweep(sweep, parser) if sweep else DEFAULT_THRESHOLDS
    return DetectOptions(
        mask_cfg=mask_cfg,
        detect_cfg=detect_cfg,
        use_warp=not getattr(args, "no_warp", False),
        thresholds=thresholds,
        jobs=getattr(args, "jobs", 1),
    )


def _cmd_synth(args, parser) -> int:
    if args.scenes < 1:
        parser.error("--scenes must be >= 1")
    cfg = SynthConfig(width=args.width, height=args.height, T=args.T)
    dirs = make_corpus(args.out, args.scenes, args.seed, cfg)
    print(f"wrote {len(dirs)} scenes under {args.out}")
    return 0


def _cmd_pair(args, parser) -> int:
    pairs = run_pair(args.corpus)
    out = Path(args.out) if args.out else Path(args.corpus) / "pairs.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(pairs, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {out}")
    return 0


def _cmd_mask(args, parser) -> int:
    if args.apply is not None:
        if args.mask_file is None or args.out_fmap is None:
            parser.error("--apply requires --mask-file and --out-fmap")
        fmap = load_fmap(args.apply)
        mask = resize_nearest(read_mask(args.mask_file), fmap.width, fmap.height)
        save_fmap(args.out_fmap, apply_mask(fmap, mask))
        print(f"wrote {args.out_fmap}")
        return 0
    if args.corpus is None or args.out is None:
        parser.error("mask generation requires --corpus and --out")
    opts = _detect_options(args, parser)
    ones = run_mask(args.corpus, args.out, opts)
    for key in sorted(ones):
        print(f"{key}: {ones[key]} verified cells")
    return 0


def _cmd_detect(args, parser) -> int:
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    opts = _detect_options(args, parser)
    report = run_detect(args.corpus, args.out, opts)
    from .render import render_report_figure

    render_report_figure(report, Path(args.out) / "report.png")
    print(f"best F1 {report.best_f1:.4f} at threshold {report.best_threshold:.3g}")
    return 0


def _cmd_eval(args, parser) -> int:
    from .imaging import load_score_fmap
    from .pipeline import _sweep_counts

    sweep = args.threshold_sweep
    thresholds = _parse_sweep(sweep, parser) if sweep else DEFAULT_THRESHOLDS
    per_image = []
    for scene_dir in corpus_scene_dirs(args.corpus):
        manifest = load_manifest(scene_dir / "manifest.json")
        for live_entry in manifest.lives():
            prefix = "" if len(manifest.lives()) == 1 else f"{live_entry.frame_id}_"
            score_path = Path(args.results) / manifest.name / f"{prefix}score.fmap"
            if not score_path.is_file():
                raise FileNotFoundError(f"missing detection result: {score_path}")
            gt_path = manifest.gt_path(live_entry)
            if not gt_path.is_file():
                raise FileNotFoundError(f"missing ground truth mask: {gt_path}")
            score = load_score_fmap(score_path)
            counts = _sweep_counts(score.data, read_mask(gt_path), thresholds)
            per_image.append((f"{manifest.name}/{live_entry.frame_id}", counts))
    report = report_from_counts(list(thresholds), per_image)
    out_dir = Path(args.out) if args.out else Path(args.results)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report_csv(report, out_dir / "report.csv")
    write_report_json(report, out_dir / "report.json")
    from .render import render_report_figure

    render_report_figure(report, out_dir / "report.png")
    print(f"best F1 {report.best_f1:.4f} at threshold {report.best_threshold:.3g}")
    return 0


def _cmd_render(args, parser) -> int:
    from .render import render_overlay

    out = render_overlay(args.scene, args.results, args.out, frame_id=args.frame)
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskpipe",
        description="Attention-mask change detection pipeline over image corpora.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic corpus with ground truth")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=42)
    sp.add_argument("--scenes", type=int, default=8)
    sp.add_argument("--width", type=int, default=640)
    sp.add_argument("--height", type=int, default=480)
    sp.add_argument("--T", type=int, default=10, help="reference half-window length")
    sp.set_defaults(func=_cmd_synth)

    sp = sub.add_parser("pair", help="pair live frames with reference viewpoints")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=_cmd_pair)

    sp = sub.add_parser("mask", help="generate attention masks, or apply one to a .fmap")
    sp.add_argument("--corpus")
    sp.add_argument("--out")
    _add_pipeline_flags(sp)
    sp.add_argument("--apply", metavar="FMAP", help="apply a mask to this feature map file")
    sp.add_argument("--mask-file", metavar="PGM")
    sp.add_argument("--out-fmap", metavar="FMAP")
    sp.set_defaults(func=_cmd_mask)

    sp = sub.add_parser("detect", help="run the full detection pipeline over a corpus")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    _add_pipeline_flags(sp)
    sp.add_argument("--gate", choices=sorted(_GATE_BY_FLAG), default="matched")
    sp.add_argument("--no-warp", action="store_true", help="compare against the raw paired frame")
    sp.add_argument("--no-uncertainty", action="store_true", help="skip the uncertainty merge")
    sp.add_argument("--smoothing-radius", type=int, default=2)
    sp.add_argument("--threshold-sweep", metavar="START:STOP:STEP")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=_cmd_detect)

    sp = sub.add_parser("eval", help="re-evaluate stored score maps against ground truth")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--results", required=True)
    sp.add_argument("--out", default=None)
    sp.add_argument("--threshold-sweep", metavar="START:STOP:STEP")
    sp.set_defaults(func=_cmd_eval)

    sp = sub.add_parser("render", help="render a five-panel overlay for one scene")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--results", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--frame", default=None, help="live frame id (defaults to the first)")
    sp.set_defaults(func=_cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging()
    try:
        return args.func(args, parser)
    except (OSError, ValueError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1


def run() -> None:
    sys.exit(main())

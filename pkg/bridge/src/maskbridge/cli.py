"""Batch exporters: descriptor grids and dense flow for a corpus.

The bridge never imports the detection pipeline; it reads manifests and
images, writes ``pdsc/`` and ``flow/`` files into the scene directories
(or a mirror tree under --out), and shells out to the pipeline CLI only to
reuse its viewpoint pairing.
"""

import argparse
import json
import logging
import os
import subprocess
import sys
from pathlib import Path

from .descriptors import MissingWeightsError, export_scene_descriptors, load_model
from .flow import estimate_flow
from .formats import load_gray, load_manifest, scene_dirs, write_flow

log = logging.getLogger("maskbridge.cli")


def _configure_logging() -> None:
    level_name = os.environ.get("MASKBRIDGE_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    logging.basicConfig(level=level if isinstance(level, int) else logging.WARNING)


def _out_scene_dir(args, scene_dir: Path, sub: str) -> Path:
    if args.out:
        return Path(args.out) / scene_dir.name / sub
    return scene_dir / sub


def _pairs_for(corpus: Path) -> dict[str, dict[str, str]]:
    """Ask the pipeline CLI for its live-to-reference pairing."""
    pairs_path = corpus / "pairs.json"
    if not pairs_path.is_file():
        result = subprocess.run(
            [sys.executable, "-m", "maskpipe", "pair", "--corpus", str(corpus),
             "--out", str(pairs_path)],
            capture_output=True,
            text=True,
        )
        if result.returncode != 0:
            raise RuntimeError(
                f"maskpipe pair failed (is the pipeline installed?): {result.stderr.strip()}"
            )
    return json.loads(pairs_path.read_text(encoding="utf-8"))


def _cmd_export_descriptors(args) -> int:
    model = load_model(args.model, args.weights, args.seed, args.device)
    total = 0
    for scene_dir in scene_dirs(args.corpus):
        _, entries = load_manifest(scene_dir / "manifest.json")
        out_dir = _out_scene_dir(args, scene_dir, "pdsc")
        total += export_scene_descriptors(
            scene_dir, entries, model, out_dir, args.patch_size, args.stride, args.device
        )
    print(f"wrote {total} descriptor grids")
    return 0


def _cmd_export_flow(args) -> int:
    pairs = _pairs_for(Path(args.corpus))
    written = 0
    for scene_dir in scene_dirs(args.corpus):
        _, entries = load_manifest(scene_dir / "manifest.json")
        by_id = {e.frame_id: e for e in entries}
        out_dir = _out_scene_dir(args, scene_dir, "flow")
        out_dir.mkdir(parents=True, exist_ok=True)
        for live_id, ref_id in pairs.get(scene_dir.name, {}).items():
            live = load_gray(by_id[live_id].path)
            ref = load_gray(by_id[ref_id].path)
            displacement, uncertainty = estimate_flow(live, ref, args.model, args.weights)
            write_flow(out_dir / f"{live_id}__{ref_id}.flow", displacement, uncertainty)
            written += 1
    print(f"wrote {written} flow fields")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maskbridge")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("export-descriptors", help="one .pdsc per frame")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", default=None, help="mirror tree root (default: in place)")
    sp.add_argument("--model", choices=["seeded-cnn", "torchscript"], default="seeded-cnn")
    sp.add_argument("--weights", default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--device", default="cpu")
    sp.add_argument("--patch-size", type=int, default=32)
    sp.add_argument("--stride", type=int, default=32)
    sp.set_defaults(func=_cmd_export_descriptors)

    sp = sub.add_parser("export-flow", help="one .flow per paired live/reference frame")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", default=None)
    sp.add_argument("--model", choices=["farneback", "torchscript"], default="farneback")
    sp.add_argument("--weights", default=None)
    sp.set_defaults(func=_cmd_export_flow)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging()
    try:
        return args.func(args)
    except MissingWeightsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def run() -> None:
    sys.exit(main())

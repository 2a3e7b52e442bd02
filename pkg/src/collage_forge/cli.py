"""Command-line front end wiring the pipeline stages together.

Exit codes: 0 success, 2 parse/validation errors in input data, 3 I/O
failures, 4 unsatisfiable synthesis, 5 category vocabulary mismatch.
The env var COLLAGE_FORGE_SEED provides a default master seed; --seed
supersedes it.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
from pathlib import Path

from . import __version__
from .context import build_index, combo_stats
from .dataset_io import (
    OutputLayout,
    coco_from_dataset,
    merge_manifests,
    read_detection_rows,
    read_json,
    write_dataset,
    write_manifest,
)
from .engine import SynthesisConfig, plan_collages_detailed, render_plans
from .errors import (
    DimensionMismatch,
    EmptyCombo,
    MissingFrameImage,
    NoBackgrounds,
    OverlapError,
    ParseError,
    SpeciesMismatch,
    Unsatisfiable,
)
from .fixtures import demo_fixture_spec, make_fixture
from .ingest import DatasetRoot, load_dataset, write_frames_manifest
from .metrics import EvalConfig, Detection, evaluate, format_report, gt_boxes_from_manifest
from .mining import MiningConfig, mine_backgrounds
from .model import FrameRef, Rect, Timestamp

EXIT_PARSE = 2
EXIT_IO = 3
EXIT_UNSATISFIABLE = 4
EXIT_VOCABULARY = 5

SEED_ENV_VAR = "COLLAGE_FORGE_SEED"


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ParseError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}")


def _add_dataset_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--root", type=Path, required=True, help="dataset directory (standard layout)")
    parser.add_argument("--fps", type=float, default=30.0, help="declared frame rate (default 30)")


def _add_buffer_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--buffer-seconds",
        type=float,
        default=10.0,
        help="removal window half-width around each count event (default 10)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="collage-forge",
        description="Synthesize context-matched collage training images and evaluate detections.",
    )
    parser.add_argument("--version", action="version", version=f"collage-forge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fixture = sub.add_parser("fixture", help="write a synthetic demo dataset")
    p_fixture.add_argument("--out", type=Path, required=True)
    p_fixture.add_argument("--frames", type=int, default=120)
    p_fixture.add_argument("--width", type=int, default=1920)
    p_fixture.add_argument("--height", type=int, default=1080)
    p_fixture.add_argument("--seed", type=int, default=None)
    p_fixture.add_argument("--video-id", default="demo0")

    p_mine = sub.add_parser("mine", help="compute the background frame set")
    _add_dataset_args(p_mine)
    _add_buffer_arg(p_mine)
    p_mine.add_argument("--out", type=Path, help="write surviving frames as a frames-manifest CSV")

    p_stats = sub.add_parser("stats", help="per-combo background and box counts")
    _add_dataset_args(p_stats)
    _add_buffer_arg(p_stats)
    p_stats.add_argument("--out", type=Path, help="write CSV here instead of stdout")

    p_synth = sub.add_parser("synthesize", help="plan, render and persist a collage dataset")
    _add_dataset_args(p_synth)
    _add_buffer_arg(p_synth)
    p_synth.add_argument("--out", type=Path, required=True, help="output directory")
    p_synth.add_argument("--mode", choices=["matched", "random"], default="matched")
    p_synth.add_argument("--min-collages", type=int, default=2_000)
    p_synth.add_argument("--max-boxes", type=int, default=15)
    p_synth.add_argument("--tau", type=float, default=0.0)
    p_synth.add_argument("--max-place-attempts", type=int, default=50)
    p_synth.add_argument("--seed", type=int, default=None, help=f"master seed (default ${SEED_ENV_VAR} or 0)")
    p_synth.add_argument("--workers", type=int, default=1)

    p_eval = sub.add_parser("evaluate", help="score detections against annotations")
    p_eval.add_argument("annotations", type=Path, help="COCO-style annotation JSON")
    p_eval.add_argument("detections", type=Path, help="detections CSV")
    p_eval.add_argument("--full-suite", action="store_true", help="report the aggregate AP suite")
    return parser


def cmd_fixture(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    spec = demo_fixture_spec(
        n_frames=args.frames,
        frame_width=args.width,
        frame_height=args.height,
        seed=seed,
        video_id=args.video_id,
    )
    make_fixture(spec, args.out)
    print(
        f"fixture written to {args.out}: {spec.n_frames} frames, "
        f"{len(spec.planted_boxes)} boxes, {len(spec.cabof_events)} count events"
    )
    return 0


def _mine(args: argparse.Namespace):
    root = DatasetRoot.standard(args.root, fps=args.fps)
    dataset = load_dataset(root)
    cfg = MiningConfig(buffer_ms=round(args.buffer_seconds * 1000))
    backgrounds = mine_backgrounds(dataset.frames, dataset.cabof, cfg)
    return dataset, backgrounds


def cmd_mine(args: argparse.Namespace) -> int:
    dataset, backgrounds = _mine(args)
    n_frames = len(dataset.frames)
    removed = n_frames - len(backgrounds)
    ratio = removed / n_frames if n_frames else 0.0
    if args.out is not None:
        rows = [(ref, dataset.store.relpath(ref)) for ref in backgrounds]
        write_frames_manifest(args.out, rows)
    print(f"frames={n_frames} backgrounds={len(backgrounds)} removal_ratio={ratio:.3f}")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    dataset, backgrounds = _mine(args)
    index = build_index(backgrounds, dataset.boxes, dataset.substrate)
    lines = ["combo,n_backgrounds,n_boxes"]
    lines += [f"{combo},{n_bg},{n_boxes}" for combo, n_bg, n_boxes in combo_stats(index)]
    text = "\n".join(lines) + "\n"
    if args.out is not None:
        args.out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_synthesize(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    if args.workers < 1:
        raise ParseError(f"--workers must be >= 1, got {args.workers}")
    dataset, backgrounds = _mine(args)
    index = build_index(backgrounds, dataset.boxes, dataset.substrate)
    cfg = SynthesisConfig(
        max_boxes=args.max_boxes,
        min_collages=args.min_collages,
        mode=args.mode,
        tau=args.tau,
        max_place_attempts=args.max_place_attempts,
        master_seed=seed,
    )
    planned = plan_collages_detailed(index, cfg)
    layout = OutputLayout.standard(args.out)
    rendered = render_plans(planned, dataset.store, workers=args.workers)
    summary = write_dataset(planned, rendered, layout, dataset.store.boxes_by_id)

    original = coco_from_dataset(dataset)
    collage = read_json(layout.annotation_path)
    write_manifest(merge_manifests(original, collage), layout.merged_manifest_path)

    meta = {
        "tool": "collage-forge",
        "version": __version__,
        "python": platform.python_version(),
        "command": "synthesize",
        "config": {
            "root": str(args.root),
            "fps": args.fps,
            "buffer_seconds": args.buffer_seconds,
            "mode": cfg.mode,
            "min_collages": cfg.min_collages,
            "max_boxes": cfg.max_boxes,
            "tau": cfg.tau,
            "max_place_attempts": cfg.max_place_attempts,
            "master_seed": cfg.master_seed,
            "workers": args.workers,
        },
    }
    with open(Path(args.out) / "run.meta", "w", encoding="utf-8") as handle:
        json.dump(meta, handle, sort_keys=True, indent=2)
        handle.write("\n")

    print(
        f"collages={summary.n_images} annotations={summary.n_annotations} "
        f"skips={summary.n_skips} epochs={summary.n_epochs} mode={cfg.mode} seed={cfg.master_seed}"
    )
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    manifest = read_json(args.annotations)
    if not isinstance(manifest, dict) or "annotations" not in manifest or "images" not in manifest:
        raise ParseError("not a COCO-style manifest", path=args.annotations)
    gts = gt_boxes_from_manifest(manifest)
    categories = {record["name"] for record in manifest.get("categories", [])}

    images_by_key = {
        (record.get("video_id", str(record["id"])), record.get("frame_index", record["id"])): record
        for record in manifest.get("images", [])
    }
    detections = []
    for video_id, frame_index, x, y, w, h, species, score in read_detection_rows(args.detections):
        if species not in categories:
            raise SpeciesMismatch(
                f"detection species {species!r} is not in the annotation vocabulary"
            )
        record = images_by_key.get((video_id, frame_index))
        if record is not None:
            frame = FrameRef(
                video_id,
                frame_index,
                Timestamp(record.get("timestamp_ms", 0)),
                record["width"],
                record["height"],
            )
        else:
            # Detections on frames unknown to the ground truth still count
            # as false positives; synthesize a frame just large enough.
            frame = FrameRef(video_id, frame_index, Timestamp(0), x + w + 1, y + h + 1)
        detections.append(Detection(frame, Rect(x, y, w, h), species, score))

    cfg = EvalConfig.full_suite() if args.full_suite else EvalConfig()
    result = evaluate(gts, detections, cfg)
    print(format_report(result, full_suite=args.full_suite))
    return 0


_COMMANDS = {
    "fixture": cmd_fixture,
    "mine": cmd_mine,
    "stats": cmd_stats,
    "synthesize": cmd_synthesize,
    "evaluate": cmd_evaluate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ParseError, OverlapError, MissingFrameImage, DimensionMismatch, EmptyCombo, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (Unsatisfiable, NoBackgrounds) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNSATISFIABLE
    except SpeciesMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VOCABULARY
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

"""Dataset persistence: collage images, annotations, provenance, manifests.

File contracts
--------------
* Annotation file: COCO-compatible JSON with ``images``, ``annotations``
  (bbox = [x, y, width, height] integer pixels, top-left origin) and
  ``categories``. Every image record carries a ``substrate`` attribute
  plus ``video_id``/``frame_index``/``timestamp_ms`` so detections can be
  joined back to frames. Collage images use video_id "collage" and their
  plan id as frame_index.
* Provenance sidecar: JSON lines, one record per annotation with fields
  ``annotation_id, plan_id, source_box_id, source_video, source_frame,
  paint_order, visible_px, total_px``.
* Run manifest: JSON lines, one record per plan with fields ``plan_id,
  seed, mode, epoch, source_combo, background (video_id, frame_index,
  timestamp_ms, width, height), background_substrate, placements
  (source_box_id, x, y, w, h, paint_order), skips (source_box_id,
  reason)``.
* Merged manifest: the annotation schema plus a per-image ``source`` field
  marking ``original`` or ``collage``; ids re-keyed dense from 1.

All JSON output is written with sorted keys and fixed separators, so
identical inputs always produce identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from PIL import Image

from .engine import PlannedCollage, RenderedCollage, SkipRecord, check_occlusion
from .errors import ParseError, SpeciesMismatch
from .ingest import LoadedDataset, SubstrateTrack
from .model import (
    BoxLabel,
    CollagePlan,
    FrameRef,
    Placement,
    Rect,
    SubstrateCombo,
    Timestamp,
)

COLLAGE_VIDEO_ID = "collage"


@dataclass(frozen=True)
class OutputLayout:
    """Where one synthesis run lands on disk."""

    out_dir: Path
    annotation_path: Path
    provenance_path: Path
    run_manifest_path: Path
    merged_manifest_path: Path

    def __post_init__(self):
        paths = [
            Path(self.annotation_path),
            Path(self.provenance_path),
            Path(self.run_manifest_path),
            Path(self.merged_manifest_path),
        ]
        if len({str(p) for p in paths}) != len(paths):
            raise ValueError("output layout paths must be distinct")

    @classmethod
    def standard(cls, out_dir: Path) -> "OutputLayout":
        out_dir = Path(out_dir)
        return cls(
            out_dir=out_dir,
            annotation_path=out_dir / "annotations.json",
            provenance_path=out_dir / "provenance.jsonl",
            run_manifest_path=out_dir / "run_manifest.jsonl",
            merged_manifest_path=out_dir / "merged_annotations.json",
        )

    @property
    def images_dir(self) -> Path:
        return Path(self.out_dir) / "images"

    def ensure_dirs(self) -> None:
        self.images_dir.mkdir(parents=True, exist_ok=True)


def image_filename(plan_id: int) -> str:
    return f"collage_{plan_id:06d}.png"


def _dump_json(payload, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, sort_keys=True, separators=(",", ":"))
        handle.write("\n")


def _json_line(payload) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def read_json(path: Path):
    try:
        with open(path, encoding="utf-8") as handle:
            return json.load(handle)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", path=path)


# --- run manifest (plan serialization) -------------------------------------


def frame_ref_to_record(ref: FrameRef) -> dict:
    return {
        "video_id": ref.video_id,
        "frame_index": ref.frame_index,
        "timestamp_ms": ref.timestamp.millis,
        "width": ref.width,
        "height": ref.height,
    }


def frame_ref_from_record(record: Mapping) -> FrameRef:
    return FrameRef(
        record["video_id"],
        record["frame_index"],
        Timestamp(record["timestamp_ms"]),
        record["width"],
        record["height"],
    )


def planned_to_record(planned: PlannedCollage) -> dict:
    plan = planned.plan
    return {
        "plan_id": plan.plan_id,
        "seed": plan.seed,
        "mode": plan.mode,
        "epoch": planned.epoch,
        "source_combo": planned.source_combo.canonical,
        "background": frame_ref_to_record(plan.background),
        "background_substrate": plan.background_substrate.canonical,
        "placements": [
            {
                "source_box_id": p.source_box_id,
                "x": p.dest.x,
                "y": p.dest.y,
                "w": p.dest.w,
                "h": p.dest.h,
                "paint_order": p.paint_order,
            }
            for p in plan.placements
        ],
        "skips": [
            {"source_box_id": s.source_box_id, "reason": s.reason} for s in planned.skips
        ],
    }


def planned_from_record(record: Mapping) -> PlannedCollage:
    plan = CollagePlan(
        plan_id=record["plan_id"],
        background=frame_ref_from_record(record["background"]),
        background_substrate=SubstrateCombo.from_canonical(record["background_substrate"]),
        placements=tuple(
            Placement(p["source_box_id"], Rect(p["x"], p["y"], p["w"], p["h"]), p["paint_order"])
            for p in record["placements"]
        ),
        mode=record["mode"],
        seed=record["seed"],
    )
    return PlannedCollage(
        plan=plan,
        source_combo=SubstrateCombo.from_canonical(record["source_combo"]),
        epoch=record["epoch"],
        skips=tuple(SkipRecord(s["source_box_id"], s["reason"]) for s in record["skips"]),
    )


def write_run_manifest(path: Path, planned: Iterable[PlannedCollage]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for pc in planned:
            handle.write(_json_line(planned_to_record(pc)) + "\n")


def read_run_manifest(path: Path) -> list[PlannedCollage]:
    out = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(planned_from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise ParseError(f"bad run-manifest record: {exc}", path=path, line=line_no)
    return out


# --- collage dataset writing ------------------------------------------------


@dataclass(frozen=True)
class WriteSummary:
    """Counts reported after a dataset write."""

    n_images: int
    n_annotations: int
    n_skips: int
    n_epochs: int


def write_dataset(
    planned: list[PlannedCollage],
    rendered: Iterable[RenderedCollage],
    layout: OutputLayout,
    boxes_by_id: Mapping[int, BoxLabel],
) -> WriteSummary:
    """Persist rendered collages plus annotations, provenance and manifest.

    Images are written as they arrive (any order); the JSON artifacts are
    assembled in plan-id order at the end, so re-running with the same
    inputs reproduces every byte.
    """
    by_id = {pc.plan.plan_id: pc for pc in planned}
    if len(by_id) != len(planned):
        raise ValueError("duplicate plan_id in planned collages")
    layout.ensure_dirs()

    annotations_by_plan: dict[int, list[tuple[Rect, str]]] = {}
    for rc in rendered:
        if rc.plan_id not in by_id:
            raise ValueError(f"rendered collage {rc.plan_id} has no matching plan")
        if rc.plan_id in annotations_by_plan:
            raise ValueError(f"duplicate rendered collage for plan {rc.plan_id}")
        Image.fromarray(rc.image, "RGB").save(layout.images_dir / image_filename(rc.plan_id))
        annotations_by_plan[rc.plan_id] = rc.annotations
    missing = set(by_id) - set(annotations_by_plan)
    if missing:
        raise ValueError(f"plans never rendered: {sorted(missing)}")

    species_names = sorted(
        {species for anns in annotations_by_plan.values() for _, species in anns}
    )
    category_ids = {name: i + 1 for i, name in enumerate(species_names)}

    images = []
    annotations = []
    provenance_lines = []
    ann_id = 0
    for plan_id in sorted(annotations_by_plan):
        pc = by_id[plan_id]
        plan = pc.plan
        images.append(
            {
                "id": plan_id + 1,
                "file_name": f"images/{image_filename(plan_id)}",
                "width": plan.background.width,
                "height": plan.background.height,
                "substrate": plan.background_substrate.canonical,
                "video_id": COLLAGE_VIDEO_ID,
                "frame_index": plan_id,
                "timestamp_ms": 0,
            }
        )
        occlusion = {
            entry.paint_order: entry for entry in check_occlusion(plan.placements).entries
        }
        placements = sorted(plan.placements, key=lambda p: p.paint_order)
        for placement, (dest, species) in zip(placements, annotations_by_plan[plan_id]):
            ann_id += 1
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": plan_id + 1,
                    "category_id": category_ids[species],
                    "bbox": [dest.x, dest.y, dest.w, dest.h],
                    "area": dest.area,
                    "iscrowd": 0,
                }
            )
            box = boxes_by_id[placement.source_box_id]
            entry = occlusion[placement.paint_order]
            provenance_lines.append(
                _json_line(
                    {
                        "annotation_id": ann_id,
                        "plan_id": plan_id,
                        "source_box_id": placement.source_box_id,
                        "source_video": box.frame.video_id,
                        "source_frame": box.frame.frame_index,
                        "paint_order": placement.paint_order,
                        "visible_px": entry.visible_px,
                        "total_px": entry.total_px,
                    }
                )
            )

    coco = {
        "images": images,
        "annotations": annotations,
        "categories": [
            {"id": category_ids[name], "name": name, "supercategory": "species"}
            for name in species_names
        ],
    }
    _dump_json(coco, layout.annotation_path)
    with open(layout.provenance_path, "w", encoding="utf-8") as handle:
        for line in provenance_lines:
            handle.write(line + "\n")
    write_run_manifest(layout.run_manifest_path, sorted(planned, key=lambda pc: pc.plan.plan_id))

    return WriteSummary(
        n_images=len(images),
        n_annotations=len(annotations),
        n_skips=sum(len(pc.skips) for pc in planned),
        n_epochs=max((pc.epoch for pc in planned), default=0) + 1,
    )


def read_provenance(path: Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad provenance record: {exc}", path=path, line=line_no)
    return out


# --- original dataset manifest and merging ----------------------------------


def coco_from_dataset(dataset: LoadedDataset) -> dict:
    """COCO-style manifest for the original (real-frame) training set."""
    track = SubstrateTrack(dataset.substrate)
    image_ids = {frame.key: i + 1 for i, frame in enumerate(dataset.frames)}
    images = [
        {
            "id": image_ids[frame.key],
            "file_name": dataset.store.relpath(frame),
            "width": frame.width,
            "height": frame.height,
            "substrate": track.combo_at(frame.video_id, frame.timestamp.millis).canonical,
            "video_id": frame.video_id,
            "frame_index": frame.frame_index,
            "timestamp_ms": frame.timestamp.millis,
        }
        for frame in dataset.frames
    ]
    species_names = sorted({box.species for box in dataset.boxes})
    category_ids = {name: i + 1 for i, name in enumerate(species_names)}
    annotations = [
        {
            "id": i + 1,
            "image_id": image_ids[box.frame.key],
            "category_id": category_ids[box.species],
            "bbox": [box.rect.x, box.rect.y, box.rect.w, box.rect.h],
            "area": box.rect.area,
            "iscrowd": 0,
            "source_box_id": box.id,
        }
        for i, box in enumerate(dataset.boxes)
    ]
    return {
        "images": images,
        "annotations": annotations,
        "categories": [
            {"id": category_ids[name], "name": name, "supercategory": "species"}
            for name in species_names
        ],
    }


def merge_manifests(original: dict, collage: dict) -> dict:
    """Merge two manifests into one training manifest.

    Categories are unified by species name (conflicting metadata raises
    SpeciesMismatch); image and annotation ids are re-keyed dense from 1,
    originals first. Every image gains a ``source`` field.
    """
    merged_cats: dict[str, dict] = {}
    for source in (original, collage):
        for cat in source.get("categories", []):
            meta = {k: v for k, v in cat.items() if k != "id"}
            existing = merged_cats.get(cat["name"])
            if existing is None:
                merged_cats[cat["name"]] = meta
            elif existing != meta:
                raise SpeciesMismatch(
                    f"species {cat['name']!r} maps to conflicting category metadata: "
                    f"{existing} vs {meta}"
                )
    names = sorted(merged_cats)
    category_ids = {name: i + 1 for i, name in enumerate(names)}

    def old_cat_names(manifest: dict) -> dict[int, str]:
        return {cat["id"]: cat["name"] for cat in manifest.get("categories", [])}

    images = []
    annotations = []
    next_image = 1
    next_ann = 1
    for manifest, source_name in ((original, "original"), (collage, "collage")):
        cat_names = old_cat_names(manifest)
        image_map: dict[int, int] = {}
        for record in sorted(manifest.get("images", []), key=lambda r: r["id"]):
            image_map[record["id"]] = next_image
            merged = dict(record)
            merged["id"] = next_image
            merged["source"] = source_name
            images.append(merged)
            next_image += 1
        for record in sorted(manifest.get("annotations", []), key=lambda r: r["id"]):
            merged = dict(record)
            merged["id"] = next_ann
            merged["image_id"] = image_map[record["image_id"]]
            merged["category_id"] = category_ids[cat_names[record["category_id"]]]
            annotations.append(merged)
            next_ann += 1

    return {
        "images": images,
        "annotations": annotations,
        "categories": [
            {"id": category_ids[name], "name": name, **merged_cats[name]} for name in names
        ],
    }


def write_manifest(manifest: dict, path: Path) -> None:
    _dump_json(manifest, path)


# --- detections file ---------------------------------------------------------

DETECTIONS_HEADER = ["video_id", "frame_index", "x", "y", "w", "h", "species", "score"]


def read_detection_rows(path: Path) -> list[tuple[str, int, int, int, int, int, str, float]]:
    """Parse the detections CSV into raw tuples.

    Format: header ``video_id,frame_index,x,y,w,h,species,score`` then one
    detection per line.
    """
    import csv

    rows = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("missing header row", path=path, line=1)
        if header != DETECTIONS_HEADER:
            raise ParseError(
                f"bad header {','.join(header)!r}, expected {','.join(DETECTIONS_HEADER)!r}",
                path=path,
                line=1,
            )
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(DETECTIONS_HEADER):
                raise ParseError(
                    f"expected {len(DETECTIONS_HEADER)} fields, got {len(row)}",
                    path=path,
                    line=line_no,
                )
            try:
                rows.append(
                    (
                        row[0],
                        int(row[1]),
                        int(row[2]),
                        int(row[3]),
                        int(row[4]),
                        int(row[5]),
                        row[6],
                        float(row[7]),
                    )
                )
            except ValueError as exc:
                raise ParseError(str(exc), path=path, line=line_no)
    return rows

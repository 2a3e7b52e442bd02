"""Deterministic synthetic fixtures standing in for a real frame dataset.

A fixture is a full dataset on disk: flat-colored frames (one background
color per substrate combo), solid-colored rectangles for planted boxes,
and the four CSV label files. Everything is a pure function of the fixture
spec, so the same spec written twice produces byte-identical trees.

Box fill colors are injective in the box id (blue channel pinned high,
backgrounds pinned low), which lets tests recover per-box pixel ownership
from rendered collages.
"""

from __future__ import annotations

import csv
import hashlib
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .ingest import (
    BOXES_HEADER,
    CABOF_HEADER,
    FRAMES_HEADER,
    SUBSTRATE_HEADER,
    DatasetRoot,
)
from .model import canonical_combo, frame_timestamp

_BACKGROUND_BLUE = 16
_BOX_BLUE = 240


@dataclass(frozen=True)
class PlantedBox:
    """One scheduled bounding box in a fixture."""

    frame_index: int
    x: int
    y: int
    w: int
    h: int
    species: str


@dataclass(frozen=True)
class FixtureSpec:
    """Parameters for one synthetic dataset.

    ``frame_step`` spaces the extracted frame indices (step 30 at 30 fps
    means one stored frame per second). The substrate track is a list of
    ``(start_ms, end_ms, codes)`` segments; cabof_events is a list of
    ``(timestamp_ms, species, count)``.
    """

    n_frames: int
    frame_width: int
    frame_height: int
    video_id: str = "vid0"
    fps: float = 30.0
    frame_step: int = 1
    species: tuple[str, ...] = ("urchin", "gorgonian")
    substrate_track: tuple[tuple[int, int, tuple[str, ...]], ...] = ()
    planted_boxes: tuple[PlantedBox, ...] = ()
    cabof_events: tuple[tuple[int, str, int], ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("fixture needs at least one frame")
        if self.frame_width < 1 or self.frame_height < 1:
            raise ValueError("fixture frames need positive dimensions")
        if self.frame_step < 1:
            raise ValueError("frame_step must be >= 1")

    def frame_indices(self) -> list[int]:
        return [i * self.frame_step for i in range(self.n_frames)]


def background_color(seed: int, canonical: str) -> tuple[int, int, int]:
    """Flat background color for a substrate combo (blue channel low)."""
    digest = hashlib.sha256(f"{seed}:bg:{canonical}".encode("utf-8")).digest()
    return (digest[0], digest[1], _BACKGROUND_BLUE)


def box_color(seed: int, box_id: int) -> tuple[int, int, int]:
    """Solid fill color for a planted box, injective in the id.

    Supports ids up to 65535; red/green channels encode the id XORed with
    seed-derived bytes, the blue channel is pinned so box pixels can never
    collide with background pixels.
    """
    if not 0 <= box_id <= 0xFFFF:
        raise ValueError(f"fixture box ids must fit 16 bits, got {box_id}")
    digest = hashlib.sha256(f"{seed}:box".encode("utf-8")).digest()
    return ((box_id >> 8) ^ digest[0], (box_id & 0xFF) ^ digest[1], _BOX_BLUE)


def image_name(video_id: str, frame_index: int) -> str:
    return f"frame_{video_id}_{frame_index:06d}.png"


def make_fixture(spec: FixtureSpec, out_dir: Path) -> DatasetRoot:
    """Write the fixture dataset under ``out_dir`` and return its root.

    Frames are flat images colored by their substrate combo; each planted
    box is drawn as a solid rectangle whose color encodes its box id. Box
    ids are assigned 1..N in schedule order.
    """
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)

    indices = spec.frame_indices()
    index_set = set(indices)
    track = [
        (start, end, canonical_combo(codes)) for start, end, codes in spec.substrate_track
    ]

    def combo_for(millis: int):
        for start, end, combo in track:
            if start <= millis < end:
                return combo
        return canonical_combo(["unknown"])

    boxes_by_frame: dict[int, list[tuple[int, PlantedBox]]] = {}
    for box_id, planted in enumerate(spec.planted_boxes, start=1):
        if planted.frame_index not in index_set:
            raise ValueError(f"planted box on unknown frame index {planted.frame_index}")
        if planted.x + planted.w > spec.frame_width or planted.y + planted.h > spec.frame_height:
            raise ValueError(f"planted box {box_id} does not fit the frame")
        boxes_by_frame.setdefault(planted.frame_index, []).append((box_id, planted))

    frame_rows = []
    for frame_index in indices:
        millis = frame_timestamp(frame_index, spec.fps).millis
        combo = combo_for(millis)
        image = np.empty((spec.frame_height, spec.frame_width, 3), dtype=np.uint8)
        image[:, :] = background_color(spec.seed, combo.canonical)
        for box_id, planted in boxes_by_frame.get(frame_index, []):
            image[
                planted.y : planted.y + planted.h, planted.x : planted.x + planted.w
            ] = box_color(spec.seed, box_id)
        name = image_name(spec.video_id, frame_index)
        Image.fromarray(image, "RGB").save(images_dir / name)
        frame_rows.append(
            [
                spec.video_id,
                frame_index,
                millis,
                spec.frame_width,
                spec.frame_height,
                f"images/{name}",
            ]
        )

    def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(header)
            writer.writerows(rows)

    write_csv(out_dir / "frames.csv", FRAMES_HEADER, frame_rows)
    write_csv(
        out_dir / "boxes.csv",
        BOXES_HEADER,
        [
            [box_id, spec.video_id, planted.frame_index, planted.x, planted.y, planted.w, planted.h, planted.species]
            for box_id, planted in enumerate(spec.planted_boxes, start=1)
        ],
    )
    write_csv(
        out_dir / "cabof.csv",
        CABOF_HEADER,
        [[spec.video_id, millis, species, count] for millis, species, count in spec.cabof_events],
    )
    write_csv(
        out_dir / "substrate.csv",
        SUBSTRATE_HEADER,
        [
            [spec.video_id, start, end, ";".join(combo.codes)]
            for start, end, combo in track
        ],
    )
    return DatasetRoot.standard(out_dir, fps=spec.fps)


def demo_fixture_spec(
    n_frames: int = 120,
    frame_width: int = 1920,
    frame_height: int = 1080,
    seed: int = 0,
    video_id: str = "demo0",
    fps: float = 30.0,
) -> FixtureSpec:
    """A survey-shaped fixture: one stored frame per second of video.

    The substrate track rotates through four combos in equal segments.
    Count events sit at the middle of each segment so mining keeps clean
    stretches of every substrate, and boxes are planted on the busy frames
    inside those event windows (up to eight per frame, laid out on a
    non-overlapping grid so every crop is a solid color block).
    """
    # Count windows are +/-10 s wide by default downstream; segments must be
    # wider than 20 s or mining would remove every frame.
    if n_frames < 100:
        raise ValueError("demo fixture needs at least 100 frames (100 s of video)")
    if frame_width < 400 or frame_height < 240:
        raise ValueError("demo fixture needs frames of at least 400x240")
    frame_step = max(1, round(fps))
    duration_ms = n_frames * round(frame_step * 1000 / fps)
    combos = (("mud",), ("cobble", "mud"), ("rock",), ("sand",))
    segment = duration_ms // len(combos)
    substrate_track = tuple(
        (i * segment, duration_ms if i == len(combos) - 1 else (i + 1) * segment, combo)
        for i, combo in enumerate(combos)
    )
    species = ("basket_star", "gorgonian", "sea_cucumber", "squat_lobster", "sponge", "urchin")

    rng = random.Random(seed)
    cabof_events = []
    planted: list[PlantedBox] = []
    step_ms = round(frame_step * 1000 / fps)
    for i in range(len(combos)):
        center_ms = i * segment + segment // 2
        cabof_events.append((center_ms, species[i % len(species)], rng.randint(1, 3)))
        center_frame = center_ms // step_ms
        for busy in range(center_frame - 2, center_frame + 3):
            if not 0 <= busy < n_frames:
                continue
            frame_index = busy * frame_step
            cols, rows = 4, 2
            cell_w = frame_width // cols
            cell_h = frame_height // rows
            for slot in range(cols * rows):
                cx = (slot % cols) * cell_w
                cy = (slot // cols) * cell_h
                w = rng.randint(40, min(220, cell_w - 2))
                h = rng.randint(30, min(180, cell_h - 2))
                x = cx + rng.randint(0, cell_w - w - 1)
                y = cy + rng.randint(0, cell_h - h - 1)
                planted.append(
                    PlantedBox(frame_index, x, y, w, h, rng.choice(species))
                )
    return FixtureSpec(
        n_frames=n_frames,
        frame_width=frame_width,
        frame_height=frame_height,
        video_id=video_id,
        fps=fps,
        frame_step=frame_step,
        species=species,
        substrate_track=substrate_track,
        planted_boxes=tuple(planted),
        cabof_events=tuple(cabof_events),
        seed=seed,
    )

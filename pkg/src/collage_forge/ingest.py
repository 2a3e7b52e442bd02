"""Parsing of the four dataset inputs into the domain model.

A dataset on disk is four UTF-8 CSV files plus a directory of PNG frames:

* frames manifest ``frames.csv`` inside ``frames_dir``:
  ``video_id,frame_index,timestamp_ms,width,height,image_path``
  (image paths relative to ``frames_dir``)
* boxes file: ``box_id,video_id,frame_index,x,y,w,h,species``
* cabof file: ``video_id,timestamp_ms,species,count``
* substrate file: ``video_id,start_ms,end_ms,codes`` with codes
  semicolon-separated, e.g. ``mud;cobble``

All files require their header row. Substrate intervals are half-open
``[start, end)`` so a boundary timestamp belongs to exactly one interval.
"""

from __future__ import annotations

import csv
import threading
from bisect import bisect_right
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from .errors import DimensionMismatch, EmptyCombo, MissingFrameImage, OverlapError, ParseError
from .model import (
    UNKNOWN_COMBO,
    BoxLabel,
    CabofLabel,
    FrameRef,
    Rect,
    SubstrateCombo,
    Timestamp,
    canonical_combo,
    frame_timestamp,
)

FRAMES_HEADER = ["video_id", "frame_index", "timestamp_ms", "width", "height", "image_path"]
BOXES_HEADER = ["box_id", "video_id", "frame_index", "x", "y", "w", "h", "species"]
CABOF_HEADER = ["video_id", "timestamp_ms", "species", "count"]
SUBSTRATE_HEADER = ["video_id", "start_ms", "end_ms", "codes"]

FRAMES_MANIFEST_NAME = "frames.csv"

_IMAGE_CACHE_SLOTS = 48


@dataclass(frozen=True)
class DatasetRoot:
    """Locations of the four label inputs plus the declared frame rate."""

    frames_dir: Path
    boxes_path: Path
    cabof_path: Path
    substrate_path: Path
    fps: float = 30.0

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError(f"fps must be > 0, got {self.fps}")

    @classmethod
    def standard(cls, root: Path, fps: float = 30.0) -> "DatasetRoot":
        """Standard layout: all four files live directly under ``root``."""
        root = Path(root)
        return cls(
            frames_dir=root,
            boxes_path=root / "boxes.csv",
            cabof_path=root / "cabof.csv",
            substrate_path=root / "substrate.csv",
            fps=fps,
        )

    @property
    def frames_manifest_path(self) -> Path:
        return Path(self.frames_dir) / FRAMES_MANIFEST_NAME

    def validate_exists(self) -> None:
        for path in (
            self.frames_manifest_path,
            self.boxes_path,
            self.cabof_path,
            self.substrate_path,
        ):
            if not Path(path).is_file():
                raise FileNotFoundError(f"dataset input missing: {path}")


@dataclass(frozen=True)
class SubstrateInterval:
    """One contiguous stretch of a video carrying a substrate combo."""

    video_id: str
    start: Timestamp
    end: Timestamp
    combo: SubstrateCombo

    def __post_init__(self):
        if not self.video_id:
            raise ValueError("video_id must be nonempty")
        if self.start.millis >= self.end.millis:
            raise ValueError(
                f"substrate interval must have start < end, got "
                f"[{self.start.millis}, {self.end.millis})"
            )


class SubstrateTrack:
    """Bisect-backed lookup from (video, timestamp) to substrate combo.

    Construction validates that intervals of one video never overlap;
    lookup is total, answering UNKNOWN_COMBO for uncovered timestamps.
    """

    def __init__(self, intervals: list[SubstrateInterval]):
        per_video: dict[str, list[SubstrateInterval]] = {}
        for interval in intervals:
            per_video.setdefault(interval.video_id, []).append(interval)
        self._tracks: dict[str, tuple[list[int], list[int], list[SubstrateCombo]]] = {}
        for video_id, items in per_video.items():
            items.sort(key=lambda iv: iv.start.millis)
            for prev, cur in zip(items, items[1:]):
                if cur.start.millis < prev.end.millis:
                    raise OverlapError(
                        f"substrate intervals overlap in video {video_id!r}: "
                        f"[{prev.start.millis}, {prev.end.millis}) and "
                        f"[{cur.start.millis}, {cur.end.millis})"
                    )
            self._tracks[video_id] = (
                [iv.start.millis for iv in items],
                [iv.end.millis for iv in items],
                [iv.combo for iv in items],
            )

    def has_video(self, video_id: str) -> bool:
        return video_id in self._tracks

    def combo_at(self, video_id: str, millis: int) -> SubstrateCombo:
        track = self._tracks.get(video_id)
        if track is None:
            return UNKNOWN_COMBO
        starts, ends, combos = track
        i = bisect_right(starts, millis) - 1
        if i >= 0 and millis < ends[i]:
            return combos[i]
        return UNKNOWN_COMBO


class FrameStore:
    """Read-only access to frame images and box labels by id.

    Safe for concurrent readers: image loads go through a small locked LRU
    cache. Loading verifies each image against its manifest dimensions.
    """

    def __init__(
        self,
        frames_dir: Path,
        entries: dict[tuple[str, int], tuple[FrameRef, str]],
        boxes_by_id: dict[int, BoxLabel],
    ):
        self.frames_dir = Path(frames_dir)
        self._entries = entries
        self._boxes = boxes_by_id
        self._cache: OrderedDict[tuple[str, int], np.ndarray] = OrderedDict()
        self._lock = threading.Lock()

    def ref(self, key: tuple[str, int]) -> FrameRef:
        return self._entries[key][0]

    def relpath(self, ref: FrameRef) -> str:
        return self._entries[ref.key][1]

    def image_path(self, ref: FrameRef) -> Path:
        return self.frames_dir / self._entries[ref.key][1]

    def box(self, box_id: int) -> BoxLabel:
        return self._boxes[box_id]

    @property
    def boxes_by_id(self) -> dict[int, BoxLabel]:
        return dict(self._boxes)

    def load_image(self, ref: FrameRef) -> np.ndarray:
        """Load a frame as an (H, W, 3) uint8 RGB array.

        Raises DimensionMismatch when the stored image's size disagrees
        with the manifest. Callers must not mutate the returned array.
        """
        with self._lock:
            cached = self._cache.get(ref.key)
            if cached is not None:
                self._cache.move_to_end(ref.key)
                return cached
        path = self.image_path(ref)
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            if rgb.size != (ref.width, ref.height):
                raise DimensionMismatch(
                    f"{path}: image is {rgb.size[0]}x{rgb.size[1]} but manifest "
                    f"declares {ref.width}x{ref.height}"
                )
            array = np.asarray(rgb, dtype=np.uint8)
        array.setflags(write=False)
        with self._lock:
            self._cache[ref.key] = array
            while len(self._cache) > _IMAGE_CACHE_SLOTS:
                self._cache.popitem(last=False)
        return array


@dataclass(frozen=True)
class LoadedDataset:
    """Everything load_dataset produces.

    Iterating yields the (frames, boxes, cabof, substrate) quadruple; the
    frame store rides along as an attribute for the rendering stages.
    """

    frames: list[FrameRef]
    boxes: list[BoxLabel]
    cabof: list[CabofLabel]
    substrate: list[SubstrateInterval]
    store: FrameStore = field(compare=False)

    def __iter__(self) -> Iterator:
        return iter((self.frames, self.boxes, self.cabof, self.substrate))


def _read_rows(path: Path, header: list[str]) -> Iterator[tuple[int, list[str]]]:
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            first = next(reader)
        except StopIteration:
            raise ParseError(f"missing header row (expected {','.join(header)})", path=path, line=1)
        if first != header:
            raise ParseError(
                f"bad header {','.join(first)!r}, expected {','.join(header)!r}",
                path=path,
                line=1,
            )
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, got {len(row)}", path=path, line=line
                )
            yield line, row


def _int_field(value: str, name: str, path: Path, line: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise ParseError(f"field {name} must be an integer, got {value!r}", path=path, line=line)


def _float_field(value: str, name: str, path: Path, line: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise ParseError(f"field {name} must be a number, got {value!r}", path=path, line=line)


def read_frames_manifest(root: DatasetRoot) -> list[tuple[FrameRef, str]]:
    """Parse the frames manifest into (FrameRef, relative image path) pairs.

    Validates the declared timestamp of every frame against the dataset
    fps (timestamps must equal round(frame_index * 1000 / fps)) and rejects
    duplicate frame keys.
    """
    path = root.frames_manifest_path
    seen: set[tuple[str, int]] = set()
    out: list[tuple[FrameRef, str]] = []
    for line, row in _read_rows(path, FRAMES_HEADER):
        video_id = row[0]
        frame_index = _int_field(row[1], "frame_index", path, line)
        timestamp_ms = _int_field(row[2], "timestamp_ms", path, line)
        width = _int_field(row[3], "width", path, line)
        height = _int_field(row[4], "height", path, line)
        try:
            ref = FrameRef(video_id, frame_index, Timestamp(timestamp_ms), width, height)
        except ValueError as exc:
            raise ParseError(str(exc), path=path, line=line)
        expected = frame_timestamp(frame_index, root.fps)
        if ref.timestamp != expected:
            raise ParseError(
                f"frame {ref.key} declares {timestamp_ms} ms but index {frame_index} "
                f"at {root.fps} fps implies {expected.millis} ms",
                path=path,
                line=line,
            )
        if ref.key in seen:
            raise ParseError(f"duplicate frame {ref.key}", path=path, line=line)
        seen.add(ref.key)
        out.append((ref, row[5]))
    return out


def write_frames_manifest(path: Path, rows: list[tuple[FrameRef, str]]) -> None:
    """Write a frames manifest in the same CSV format the loader reads."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(FRAMES_HEADER)
        for ref, relpath in rows:
            writer.writerow(
                [ref.video_id, ref.frame_index, ref.timestamp.millis, ref.width, ref.height, relpath]
            )


def read_cabof(path: Path) -> list[CabofLabel]:
    out: list[CabofLabel] = []
    for line, row in _read_rows(path, CABOF_HEADER):
        timestamp_ms = _int_field(row[1], "timestamp_ms", path, line)
        count = _int_field(row[3], "count", path, line)
        try:
            out.append(CabofLabel(row[0], Timestamp(timestamp_ms), row[2], count))
        except ValueError as exc:
            raise ParseError(str(exc), path=path, line=line)
    return out


def read_substrate(path: Path) -> list[SubstrateInterval]:
    out: list[SubstrateInterval] = []
    for line, row in _read_rows(path, SUBSTRATE_HEADER):
        start_ms = _int_field(row[1], "start_ms", path, line)
        end_ms = _int_field(row[2], "end_ms", path, line)
        try:
            combo = canonical_combo(row[3].split(";"))
            out.append(
                SubstrateInterval(row[0], Timestamp(start_ms), Timestamp(end_ms), combo)
            )
        except (ValueError, EmptyCombo) as exc:
            raise ParseError(str(exc), path=path, line=line)
    return out


def load_dataset(root: DatasetRoot) -> LoadedDataset:
    """Load and cross-validate the four label streams.

    Every box's substrate is resolved from its frame timestamp against the
    substrate intervals; frames with no covering interval resolve to the
    "unknown" combo. Boxes referencing frames absent from the manifest, or
    frames whose image file is missing, raise MissingFrameImage.
    """
    root = DatasetRoot(
        Path(root.frames_dir),
        Path(root.boxes_path),
        Path(root.cabof_path),
        Path(root.substrate_path),
        root.fps,
    )
    root.validate_exists()

    manifest = read_frames_manifest(root)
    frames = [ref for ref, _ in manifest]
    by_key = {ref.key: (ref, relpath) for ref, relpath in manifest}
    cabof = read_cabof(root.cabof_path)
    substrate = read_substrate(root.substrate_path)
    track = SubstrateTrack(substrate)

    boxes: list[BoxLabel] = []
    seen_ids: set[int] = set()
    path = root.boxes_path
    for line, row in _read_rows(path, BOXES_HEADER):
        box_id = _int_field(row[0], "box_id", path, line)
        video_id = row[1]
        frame_index = _int_field(row[2], "frame_index", path, line)
        x = _int_field(row[3], "x", path, line)
        y = _int_field(row[4], "y", path, line)
        w = _int_field(row[5], "w", path, line)
        h = _int_field(row[6], "h", path, line)
        species = row[7]
        if box_id in seen_ids:
            raise ParseError(f"duplicate box_id {box_id}", path=path, line=line)
        seen_ids.add(box_id)
        entry = by_key.get((video_id, frame_index))
        if entry is None:
            raise MissingFrameImage(
                f"box {box_id} references frame ({video_id!r}, {frame_index}) "
                f"not present in the frames manifest"
            )
        ref, relpath = entry
        image_path = Path(root.frames_dir) / relpath
        if not image_path.is_file():
            raise MissingFrameImage(
                f"box {box_id} references frame {ref.key} whose image {image_path} is missing"
            )
        try:
            rect = Rect(x, y, w, h)
            combo = track.combo_at(video_id, ref.timestamp.millis)
            boxes.append(BoxLabel(box_id, ref, rect, species, combo))
        except ValueError as exc:
            raise ParseError(str(exc), path=path, line=line)

    store = FrameStore(root.frames_dir, by_key, {box.id: box for box in boxes})
    return LoadedDataset(frames, boxes, cabof, substrate, store)

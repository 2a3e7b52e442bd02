"""Substrate context index: combo -> backgrounds and combo -> boxes.

Both maps are keyed by canonical combos and iterate in canonical string
order, so every consumer sees the same deterministic sequence regardless
of input order.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

from .errors import NoBackgrounds
from .ingest import SubstrateInterval, SubstrateTrack
from .model import BoxLabel, FrameRef, SubstrateCombo


@dataclass(frozen=True)
class ContextIndex:
    """Background frames and cut boxes grouped by substrate combo."""

    bg_by_combo: dict[SubstrateCombo, tuple[FrameRef, ...]]
    boxes_by_combo: dict[SubstrateCombo, tuple[BoxLabel, ...]]

    def background_combos(self) -> list[SubstrateCombo]:
        """Combos that have at least one background frame, canonical order."""
        return [combo for combo, frames in self.bg_by_combo.items() if frames]

    def n_backgrounds(self) -> int:
        return sum(len(frames) for frames in self.bg_by_combo.values())

    def n_boxes(self) -> int:
        return sum(len(boxes) for boxes in self.boxes_by_combo.values())


def build_index(
    backgrounds: list[FrameRef],
    boxes: list[BoxLabel],
    substrate: list[SubstrateInterval],
) -> ContextIndex:
    """Group backgrounds and boxes by combo.

    Background combos are resolved from the substrate intervals at each
    frame's timestamp (uncovered frames land under "unknown"); boxes carry
    their combo already, and for source videos present in the substrate
    track it is verified against the frame's combo. Group members are
    sorted by (video, frame index, box id) and total counts are preserved.
    """
    track = SubstrateTrack(substrate)
    bg_groups: dict[SubstrateCombo, list[FrameRef]] = {}
    for frame in backgrounds:
        combo = track.combo_at(frame.video_id, frame.timestamp.millis)
        bg_groups.setdefault(combo, []).append(frame)
    box_groups: dict[SubstrateCombo, list[BoxLabel]] = {}
    for box in boxes:
        if track.has_video(box.frame.video_id):
            frame_combo = track.combo_at(box.frame.video_id, box.frame.timestamp.millis)
            if box.substrate != frame_combo:
                raise ValueError(
                    f"box {box.id} carries substrate {box.substrate.canonical!r} but its "
                    f"frame {box.frame.key} resolves to {frame_combo.canonical!r}"
                )
        box_groups.setdefault(box.substrate, []).append(box)

    bg_by_combo = {
        combo: tuple(sorted(bg_groups[combo], key=lambda f: f.key))
        for combo in sorted(bg_groups, key=lambda c: c.canonical)
    }
    boxes_by_combo = {
        combo: tuple(
            sorted(box_groups[combo], key=lambda b: (b.frame.video_id, b.frame.frame_index, b.id))
        )
        for combo in sorted(box_groups, key=lambda c: c.canonical)
    }
    return ContextIndex(bg_by_combo, boxes_by_combo)


def jaccard(a: SubstrateCombo, b: SubstrateCombo) -> Fraction:
    """Exact Jaccard similarity of two combos' code sets."""
    sa, sb = set(a.codes), set(b.codes)
    return Fraction(len(sa & sb), len(sa | sb))


def resolve_combo(query: SubstrateCombo, available: Iterable[SubstrateCombo]) -> SubstrateCombo:
    """Pick the combo to stand in for ``query`` among ``available``.

    Returns ``query`` itself when present; otherwise the candidate with
    maximal Jaccard similarity, ties broken by smaller canonical string.
    The result never depends on the iteration order of ``available``.

    Raises:
        NoBackgrounds: when ``available`` is empty.
    """
    candidates = list(available)
    if not candidates:
        raise NoBackgrounds("cannot resolve a substrate combo against an empty set")
    if query in candidates:
        return query
    return min(candidates, key=lambda c: (-jaccard(query, c), c.canonical))


def combo_stats(index: ContextIndex) -> list[tuple[str, int, int]]:
    """Per-combo (canonical, n_backgrounds, n_boxes) rows, canonical order."""
    combos = set(index.bg_by_combo) | set(index.boxes_by_combo)
    return [
        (
            combo.canonical,
            len(index.bg_by_combo.get(combo, ())),
            len(index.boxes_by_combo.get(combo, ())),
        )
        for combo in sorted(combos, key=lambda c: c.canonical)
    ]

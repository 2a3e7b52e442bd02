"""Shared domain types for the collage toolchain.

Every type here is an immutable value object validated at construction, so
instances can be hashed into index maps and shared freely between threads.
No I/O happens in this module.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .errors import EmptyCombo

PLAN_MODES = ("matched", "random")

MAX_SEED = 2**64 - 1

# Reserved by the canonical string form and the CSV column encodings.
_FORBIDDEN_IN_CODES = ("+", ";", ",", "\n", "\r")


@dataclass(frozen=True, order=True)
class Timestamp:
    """Instant on a video's own clock, integer milliseconds from start."""

    millis: int

    def __post_init__(self):
        if self.millis < 0:
            raise ValueError(f"timestamp must be >= 0 ms, got {self.millis}")

    @property
    def seconds(self) -> float:
        return self.millis / 1000.0


def frame_timestamp(frame_index: int, fps: float) -> Timestamp:
    """Timestamp of a frame index at the declared fps, rounded to whole ms."""
    return Timestamp(round(frame_index * 1000 / fps))


@dataclass(frozen=True)
class FrameRef:
    """Reference to one extracted video frame.

    Width and height are the frame's pixel dimensions. They ride along on
    the reference so geometric invariants (a box fits its source frame, a
    placement stays inside its background) can be checked without a side
    lookup.
    """

    video_id: str
    frame_index: int
    timestamp: Timestamp
    width: int
    height: int

    def __post_init__(self):
        if not self.video_id:
            raise ValueError("video_id must be nonempty")
        if self.frame_index < 0:
            raise ValueError(f"frame_index must be >= 0, got {self.frame_index}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"frame dimensions must be >= 1, got {self.width}x{self.height}")

    @property
    def key(self) -> tuple[str, int]:
        """Identity of the frame within a dataset."""
        return (self.video_id, self.frame_index)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned pixel rectangle, top-left origin."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError(f"rect needs w >= 1 and h >= 1, got {self.w}x{self.h}")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"rect origin must be >= 0, got ({self.x}, {self.y})")

    @property
    def x2(self) -> int:
        """One past the right edge."""
        return self.x + self.w

    @property
    def y2(self) -> int:
        """One past the bottom edge."""
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h


@dataclass(frozen=True)
class SubstrateCombo:
    """Canonical set of substrate class codes labelling a frame's context.

    Codes are free-form strings kept in strictly increasing order; the
    canonical string form joins them with "+". Build instances through
    :func:`canonical_combo` unless the codes are already normalized.
    """

    codes: tuple[str, ...]

    def __post_init__(self):
        if not self.codes:
            raise EmptyCombo("substrate combo needs at least one code")
        for code in self.codes:
            if not code or code != code.strip():
                raise ValueError(f"substrate code must be nonempty and trimmed: {code!r}")
            for ch in _FORBIDDEN_IN_CODES:
                if ch in code:
                    raise ValueError(f"substrate code may not contain {ch!r}: {code!r}")
        if list(self.codes) != sorted(set(self.codes)):
            raise ValueError(f"codes must be strictly increasing and deduplicated: {self.codes}")

    @property
    def canonical(self) -> str:
        return "+".join(self.codes)

    def __str__(self) -> str:
        return self.canonical

    @classmethod
    def from_canonical(cls, text: str) -> "SubstrateCombo":
        return canonical_combo(text.split("+"))


def canonical_combo(codes: Iterable[str]) -> SubstrateCombo:
    """Normalize raw code strings into a canonical combo.

    Trims whitespace, drops empties, deduplicates and sorts. The canonical
    string of the result is stable across calls and input orderings.

    Raises:
        EmptyCombo: if no codes remain after trimming.
    """
    cleaned = sorted({code.strip() for code in codes if code.strip()})
    if not cleaned:
        raise EmptyCombo("substrate combo needs at least one code")
    return SubstrateCombo(tuple(cleaned))


# Frames not covered by any substrate interval get this combo; it takes part
# in context matching like any other label.
UNKNOWN_COMBO = SubstrateCombo(("unknown",))


@dataclass(frozen=True)
class CabofLabel:
    """Species count event at a video timestamp (the weak label stream)."""

    video_id: str
    timestamp: Timestamp
    species: str
    count: int

    def __post_init__(self):
        if not self.video_id:
            raise ValueError("video_id must be nonempty")
        if not self.species:
            raise ValueError("species must be nonempty")
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")


@dataclass(frozen=True)
class BoxLabel:
    """One annotated bounding box, carrying its source frame's context."""

    id: int
    frame: FrameRef
    rect: Rect
    species: str
    substrate: SubstrateCombo

    def __post_init__(self):
        if not self.species:
            raise ValueError("species must be nonempty")
        if self.rect.x2 > self.frame.width or self.rect.y2 > self.frame.height:
            raise ValueError(
                f"box {self.id}: rect {self.rect} does not fit inside "
                f"{self.frame.width}x{self.frame.height} frame {self.frame.key}"
            )


@dataclass(frozen=True)
class Placement:
    """Where one cut box lands on a background, and in which paint pass.

    The destination keeps the source rect's exact size; crops are pasted
    verbatim with no scaling.
    """

    source_box_id: int
    dest: Rect
    paint_order: int

    def __post_init__(self):
        if self.paint_order < 0:
            raise ValueError(f"paint_order must be >= 0, got {self.paint_order}")


@dataclass(frozen=True)
class CollagePlan:
    """Fully determined recipe for one collage image.

    A plan pins the background frame, the ordered placements and the seed,
    so rendering it is a pure function of the plan plus the frame store.
    """

    plan_id: int
    background: FrameRef
    background_substrate: SubstrateCombo
    placements: tuple[Placement, ...]
    mode: str
    seed: int

    def __post_init__(self):
        if self.plan_id < 0:
            raise ValueError(f"plan_id must be >= 0, got {self.plan_id}")
        if self.mode not in PLAN_MODES:
            raise ValueError(f"mode must be one of {PLAN_MODES}, got {self.mode!r}")
        if not 0 <= self.seed <= MAX_SEED:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        if not self.placements:
            raise ValueError("a collage plan needs at least one placement")
        orders = sorted(p.paint_order for p in self.placements)
        if orders != list(range(len(self.placements))):
            raise ValueError(f"paint_order values must be exactly 0..{len(self.placements) - 1}")
        for p in self.placements:
            if p.dest.x2 > self.background.width or p.dest.y2 > self.background.height:
                raise ValueError(
                    f"plan {self.plan_id}: placement {p.dest} leaves the "
                    f"{self.background.width}x{self.background.height} background"
                )


@dataclass(frozen=True)
class Detection:
    """A scored detector output box on some frame."""

    frame: FrameRef
    rect: Rect
    species: str
    score: float

    def __post_init__(self):
        if not self.species:
            raise ValueError("species must be nonempty")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")

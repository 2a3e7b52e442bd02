"""Collage synthesis: sampling, placement, occlusion checks, compositing.

Planning walks the substrate combos in canonical order, one collage per
combo per pass, drawing boxes from per-combo pools without replacement.
When every pool is empty before the target count is met, all pools refill
and the epoch counter advances. The run stops at the end of the first
pass that reaches the target.

Randomness is split per plan into independent substreams (box draws,
background choice, placement positions), so switching matched/random mode
changes only which background is picked, and rendering order or worker
count never changes any output byte.
"""

from __future__ import annotations

import random
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .context import ContextIndex, jaccard, resolve_combo
from .errors import Unsatisfiable
from .ingest import FrameStore
from .model import (
    MAX_SEED,
    PLAN_MODES,
    BoxLabel,
    CollagePlan,
    FrameRef,
    Placement,
    Rect,
    SubstrateCombo,
)
from .seeding import derive_seed

SKIP_TOO_LARGE = "too_large"
SKIP_OCCLUSION = "occlusion"


@dataclass(frozen=True)
class SynthesisConfig:
    """Knobs for one synthesis run."""

    max_boxes: int = 15
    min_collages: int = 2_000
    mode: str = "matched"
    tau: float = 0.0
    max_place_attempts: int = 50
    master_seed: int = 0

    def __post_init__(self):
        if self.max_boxes < 1:
            raise ValueError(f"max_boxes must be >= 1, got {self.max_boxes}")
        if self.min_collages < 1:
            raise ValueError(f"min_collages must be >= 1, got {self.min_collages}")
        if self.mode not in PLAN_MODES:
            raise ValueError(f"mode must be one of {PLAN_MODES}, got {self.mode!r}")
        if not 0.0 <= self.tau < 1.0:
            raise ValueError(f"tau must lie in [0, 1), got {self.tau}")
        if self.max_place_attempts < 1:
            raise ValueError(f"max_place_attempts must be >= 1, got {self.max_place_attempts}")
        if not 0 <= self.master_seed <= MAX_SEED:
            raise ValueError("master_seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class SkipRecord:
    """A box that could not be placed on its collage."""

    source_box_id: int
    reason: str


@dataclass(frozen=True)
class PlannedCollage:
    """A collage plan plus the bookkeeping the run manifest records."""

    plan: CollagePlan
    source_combo: SubstrateCombo
    epoch: int
    skips: tuple[SkipRecord, ...]


@dataclass(frozen=True)
class OcclusionEntry:
    """Visibility of one placement under everything painted after it."""

    paint_order: int
    visible_px: int
    total_px: int

    @property
    def visible_fraction(self) -> float:
        return self.visible_px / self.total_px


@dataclass(frozen=True)
class OcclusionReport:
    """Per-placement visibility, ordered by paint order."""

    entries: tuple[OcclusionEntry, ...]
    tau: float
    satisfied: bool


def _clip_overlap(base: Rect, other: Rect) -> tuple[int, int, int, int] | None:
    """Overlap of ``other`` with ``base`` in base-local pixel coordinates."""
    x0 = max(base.x, other.x) - base.x
    y0 = max(base.y, other.y) - base.y
    x1 = min(base.x2, other.x2) - base.x
    y1 = min(base.y2, other.y2) - base.y
    if x0 >= x1 or y0 >= y1:
        return None
    return x0, y0, x1, y1


def check_occlusion(placements: Sequence[Placement], tau: float = 0.0) -> OcclusionReport:
    """Count, for each placement, the pixels not covered by later paints.

    The constraint holds when every visible fraction strictly exceeds
    ``tau``; with tau = 0 that forbids exactly full occlusion and nothing
    else. Exact at integer-pixel resolution.
    """
    ordered = sorted(placements, key=lambda p: p.paint_order)
    entries = []
    for i, placement in enumerate(ordered):
        dest = placement.dest
        mask = np.ones((dest.h, dest.w), dtype=bool)
        for later in ordered[i + 1 :]:
            clip = _clip_overlap(dest, later.dest)
            if clip is not None:
                x0, y0, x1, y1 = clip
                mask[y0:y1, x0:x1] = False
        entries.append(OcclusionEntry(placement.paint_order, int(mask.sum()), dest.area))
    satisfied = all(e.visible_px > tau * e.total_px for e in entries)
    return OcclusionReport(tuple(entries), tau, satisfied)


def place_boxes(
    background_dims: tuple[int, int],
    boxes: Sequence[BoxLabel],
    tau: float,
    attempts: int,
    rng_seed: int,
) -> tuple[list[Placement], list[SkipRecord]]:
    """Place boxes one by one at uniform random in-bounds positions.

    Each tentative position is checked against all earlier placements; a
    position that would push any earlier box's visible fraction to tau or
    below is re-drawn, up to ``attempts`` draws, after which the box is
    skipped. Boxes larger than the background are skipped outright (no
    scaling). Paint order equals acceptance order.
    """
    bg_w, bg_h = background_dims
    rng = random.Random(rng_seed)
    placed: list[Placement] = []
    visible: list[np.ndarray] = []
    skips: list[SkipRecord] = []
    for box in boxes:
        w, h = box.rect.w, box.rect.h
        if w > bg_w or h > bg_h:
            skips.append(SkipRecord(box.id, SKIP_TOO_LARGE))
            continue
        accepted: Rect | None = None
        for _ in range(attempts):
            candidate = Rect(rng.randint(0, bg_w - w), rng.randint(0, bg_h - h), w, h)
            if _placement_allowed(placed, visible, candidate, tau):
                accepted = candidate
                break
        if accepted is None:
            skips.append(SkipRecord(box.id, SKIP_OCCLUSION))
            continue
        for earlier, mask in zip(placed, visible):
            clip = _clip_overlap(earlier.dest, accepted)
            if clip is not None:
                x0, y0, x1, y1 = clip
                mask[y0:y1, x0:x1] = False
        placed.append(Placement(box.id, accepted, len(placed)))
        visible.append(np.ones((h, w), dtype=bool))
    return placed, skips


def _placement_allowed(
    placed: Sequence[Placement],
    visible: Sequence[np.ndarray],
    candidate: Rect,
    tau: float,
) -> bool:
    for earlier, mask in zip(placed, visible):
        clip = _clip_overlap(earlier.dest, candidate)
        if clip is None:
            continue
        x0, y0, x1, y1 = clip
        remaining = int(mask.sum()) - int(mask[y0:y1, x0:x1].sum())
        if remaining <= tau * earlier.dest.area:
            return False
    return True


def _matched_background_pools(
    index: ContextIndex,
) -> dict[SubstrateCombo, tuple[SubstrateCombo, tuple[FrameRef, ...]]]:
    """Map each box combo to the background pool matched mode may use.

    Exact matches win; otherwise the nearest combo by Jaccard stands in,
    but only when it actually shares a code. Fully disjoint combos stay
    unresolvable, which is what makes matched mode fail on datasets where
    random mode still works.
    """
    bg_combos = [combo for combo, frames in index.bg_by_combo.items() if frames]
    pools: dict[SubstrateCombo, tuple[SubstrateCombo, tuple[FrameRef, ...]]] = {}
    for combo, boxes in index.boxes_by_combo.items():
        if not boxes or not bg_combos:
            continue
        resolved = resolve_combo(combo, bg_combos)
        if resolved == combo or jaccard(combo, resolved) > 0:
            pools[combo] = (resolved, index.bg_by_combo[resolved])
    return pools


def plan_collages_detailed(index: ContextIndex, cfg: SynthesisConfig) -> list[PlannedCollage]:
    """Run the planning loop and return plans with their manifest metadata."""
    all_backgrounds: list[FrameRef] = []
    bg_combo_of: dict[tuple[str, int], SubstrateCombo] = {}
    for combo, frames in index.bg_by_combo.items():
        for frame in frames:
            bg_combo_of[frame.key] = combo
            all_backgrounds.append(frame)

    bg_pool_for: dict[SubstrateCombo, tuple[FrameRef, ...]] = {}
    if cfg.mode == "matched":
        for combo, (_, frames) in _matched_background_pools(index).items():
            bg_pool_for[combo] = frames
        if not bg_pool_for:
            raise Unsatisfiable(
                "matched mode: no substrate combo has both boxes and a resolvable background"
            )
    else:
        if not all_backgrounds:
            raise Unsatisfiable("random mode: no background frames available")
        for combo, boxes in index.boxes_by_combo.items():
            if boxes:
                bg_pool_for[combo] = tuple(all_backgrounds)
        if not bg_pool_for:
            raise Unsatisfiable("random mode: no boxes available")

    source_combos = sorted(bg_pool_for, key=lambda c: c.canonical)
    pools: dict[SubstrateCombo, list[BoxLabel]] = {
        combo: list(index.boxes_by_combo[combo]) for combo in source_combos
    }

    planned: list[PlannedCollage] = []
    epoch = 0
    fruitless_passes = 0
    while True:
        if all(not pool for pool in pools.values()):
            for combo in source_combos:
                pools[combo] = list(index.boxes_by_combo[combo])
            epoch += 1
        made_plan = False
        for combo in source_combos:
            pool = pools[combo]
            if not pool:
                continue
            plan_id = len(planned)
            box_rng = random.Random(derive_seed(cfg.master_seed, plan_id, "boxes"))
            bg_rng = random.Random(derive_seed(cfg.master_seed, plan_id, "background"))
            want = box_rng.randint(1, cfg.max_boxes)
            chosen = [pool.pop(box_rng.randrange(len(pool))) for _ in range(min(want, len(pool)))]
            backgrounds = bg_pool_for[combo]
            background = backgrounds[bg_rng.randrange(len(backgrounds))]
            placements, skips = place_boxes(
                (background.width, background.height),
                chosen,
                cfg.tau,
                cfg.max_place_attempts,
                derive_seed(cfg.master_seed, plan_id, "place"),
            )
            if not placements:
                # Every box was skipped; the draws stay consumed but no
                # plan id is burned.
                continue
            plan = CollagePlan(
                plan_id=plan_id,
                background=background,
                background_substrate=bg_combo_of[background.key],
                placements=tuple(placements),
                mode=cfg.mode,
                seed=derive_seed(cfg.master_seed, plan_id),
            )
            planned.append(PlannedCollage(plan, combo, epoch, tuple(skips)))
            made_plan = True
        if len(planned) >= cfg.min_collages:
            return planned
        if made_plan:
            fruitless_passes = 0
        else:
            fruitless_passes += 1
            if fruitless_passes >= 2:
                raise Unsatisfiable(
                    "synthesis stalled: no box can be placed on any available background"
                )


def plan_collages(index: ContextIndex, cfg: SynthesisConfig) -> list[CollagePlan]:
    """Plan at least ``cfg.min_collages`` collages; see module docstring."""
    return [planned.plan for planned in plan_collages_detailed(index, cfg)]


def composite(plan: CollagePlan, store: FrameStore) -> tuple[np.ndarray, list[tuple[Rect, str]]]:
    """Render a plan: copy each source crop verbatim onto the background.

    Crops are pasted in paint order with no blending or alpha. Returns the
    image plus one (dest rect, species) annotation per placement, in paint
    order, including partially occluded ones.
    """
    image = store.load_image(plan.background).copy()
    annotations: list[tuple[Rect, str]] = []
    for placement in sorted(plan.placements, key=lambda p: p.paint_order):
        box = store.box(placement.source_box_id)
        src_rect, dest = box.rect, placement.dest
        if (dest.w, dest.h) != (src_rect.w, src_rect.h):
            raise ValueError(
                f"plan {plan.plan_id}: placement size {dest.w}x{dest.h} differs from "
                f"source box {box.id} ({src_rect.w}x{src_rect.h})"
            )
        source = store.load_image(box.frame)
        image[dest.y : dest.y2, dest.x : dest.x2] = source[
            src_rect.y : src_rect.y2, src_rect.x : src_rect.x2
        ]
        annotations.append((dest, box.species))
    return image, annotations


@dataclass(frozen=True)
class RenderedCollage:
    """One rendered plan: pixels plus per-placement annotations."""

    plan_id: int
    image: np.ndarray
    annotations: list[tuple[Rect, str]]


def render_plans(
    planned: Iterable[PlannedCollage], store: FrameStore, workers: int = 1
) -> Iterator[RenderedCollage]:
    """Render plans, yielding results in plan order.

    With workers > 1 rendering runs in a thread pool behind a bounded
    window, so memory stays flat and outputs are identical to the serial
    path.
    """

    def render_one(pc: PlannedCollage) -> RenderedCollage:
        image, annotations = composite(pc.plan, store)
        return RenderedCollage(pc.plan.plan_id, image, annotations)

    if workers <= 1:
        for pc in planned:
            yield render_one(pc)
        return

    window = workers * 2
    iterator = iter(planned)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        pending = deque()
        for pc in iterator:
            pending.append(pool.submit(render_one, pc))
            if len(pending) >= window:
                break
        while pending:
            done = pending.popleft()
            nxt = next(iterator, None)
            if nxt is not None:
                pending.append(pool.submit(render_one, nxt))
            yield done.result()

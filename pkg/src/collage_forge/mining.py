"""Background candidate mining from count-event timestamps.

Frames close to any count event are presumed busy; everything else goes
into the background pool. Removal windows are closed on both ends, so a
frame exactly ``buffer`` away from an event is removed.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass

from .model import CabofLabel, FrameRef


@dataclass(frozen=True)
class MiningConfig:
    """Half-width of the removal window around each count event."""

    buffer_ms: int = 10_000

    def __post_init__(self):
        if self.buffer_ms < 0:
            raise ValueError(f"buffer must be >= 0 ms, got {self.buffer_ms}")


def mine_backgrounds(
    frames: list[FrameRef], cabof: list[CabofLabel], cfg: MiningConfig = MiningConfig()
) -> list[FrameRef]:
    """Return the frames outside every [t - buffer, t + buffer] window.

    Windows only apply within their own video; input frame order is
    preserved. Sorted-and-merged windows keep this O((n + m) log m).
    """
    windows: dict[str, tuple[list[int], list[int]]] = {}
    per_video: dict[str, list[int]] = {}
    for label in cabof:
        per_video.setdefault(label.video_id, []).append(label.timestamp.millis)
    for video_id, stamps in per_video.items():
        stamps.sort()
        starts: list[int] = []
        ends: list[int] = []
        for t in stamps:
            lo, hi = t - cfg.buffer_ms, t + cfg.buffer_ms
            if ends and lo <= ends[-1]:
                ends[-1] = max(ends[-1], hi)
            else:
                starts.append(lo)
                ends.append(hi)
        windows[video_id] = (starts, ends)

    survivors: list[FrameRef] = []
    for frame in frames:
        video_windows = windows.get(frame.video_id)
        if video_windows is None:
            survivors.append(frame)
            continue
        starts, ends = video_windows
        t = frame.timestamp.millis
        i = bisect_right(starts, t) - 1
        if i >= 0 and t <= ends[i]:
            continue
        survivors.append(frame)
    return survivors

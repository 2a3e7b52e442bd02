"""Shared fixture builders for the test suite."""

from __future__ import annotations

import hashlib
from pathlib import Path

import pytest

from collage_forge.fixtures import FixtureSpec, PlantedBox, make_fixture
from collage_forge.ingest import DatasetRoot, LoadedDataset, load_dataset

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def small_spec(
    n_frames: int = 12,
    frame_width: int = 120,
    frame_height: int = 90,
    seed: int = 0,
    planted: tuple[PlantedBox, ...] | None = None,
    cabof: tuple[tuple[int, str, int], ...] = ((4_000, "urchin", 1),),
    track: tuple[tuple[int, int, tuple[str, ...]], ...] | None = None,
) -> FixtureSpec:
    """A tiny single-video dataset: one stored frame per second at 30 fps.

    Defaults: mud for the first half, cobble for the second; boxes planted
    on the frames inside the count window (seconds 3..5).
    """
    half_ms = (n_frames // 2) * 1000
    if track is None:
        track = ((0, half_ms, ("mud",)), (half_ms, n_frames * 1000, ("cobble",)))
    if planted is None:
        planted = tuple(
            PlantedBox(second * 30, 10 + 25 * slot, 8 + 20 * slot, 14, 10, "urchin")
            for second in (3, 4, 5)
            for slot in range(3)
        )
    return FixtureSpec(
        n_frames=n_frames,
        frame_width=frame_width,
        frame_height=frame_height,
        video_id="vidA",
        fps=30.0,
        frame_step=30,
        species=("urchin", "gorgonian"),
        substrate_track=track,
        planted_boxes=planted,
        cabof_events=cabof,
        seed=seed,
    )


def build_dataset(tmp_path: Path, spec: FixtureSpec, name: str = "ds") -> tuple[DatasetRoot, LoadedDataset]:
    root = make_fixture(spec, tmp_path / name)
    return root, load_dataset(root)


@pytest.fixture
def small_dataset(tmp_path):
    spec = small_spec()
    root, dataset = build_dataset(tmp_path, spec)
    return spec, root, dataset


def dir_digest(path: Path) -> dict[str, str]:
    """Relative path -> sha256 of every file under ``path``."""
    out = {}
    for file in sorted(Path(path).rglob("*")):
        if file.is_file():
            out[str(file.relative_to(path))] = hashlib.sha256(file.read_bytes()).hexdigest()
    return out

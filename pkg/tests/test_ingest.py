import csv
from pathlib import Path

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from collage_forge.errors import (
    DimensionMismatch,
    MissingFrameImage,
    OverlapError,
    ParseError,
)
from collage_forge.fixtures import FixtureSpec, PlantedBox, make_fixture
from collage_forge.ingest import DatasetRoot, SubstrateInterval, SubstrateTrack, load_dataset
from collage_forge.model import UNKNOWN_COMBO, Timestamp, canonical_combo

from conftest import build_dataset, dir_digest, small_spec

pytestmark = []


def test_counts_and_substrates(tmp_path):
    spec = FixtureSpec(
        n_frames=3,
        frame_width=60,
        frame_height=40,
        video_id="vidA",
        fps=30.0,
        frame_step=30,
        substrate_track=((0, 1500, ("mud",)), (1500, 3000, ("cobble",))),
        planted_boxes=(
            PlantedBox(0, 5, 5, 10, 8, "urchin"),
            PlantedBox(60, 20, 10, 12, 9, "gorgonian"),
        ),
        cabof_events=((500, "urchin", 2),),
    )
    root, dataset = build_dataset(tmp_path, spec)
    frames, boxes, cabof, substrate = dataset
    assert (len(frames), len(boxes), len(cabof)) == (3, 2, 1)
    assert len(substrate) == 2
    # box 1 sits at t=0 (mud), box 2 at t=2000 (cobble)
    assert boxes[0].substrate.canonical == "mud"
    assert boxes[1].substrate.canonical == "cobble"
    assert cabof[0].count == 2


def test_empty_cabof(tmp_path):
    spec = small_spec(cabof=())
    _, dataset = build_dataset(tmp_path, spec)
    assert dataset.cabof == []


def test_box_substrate_containment(tmp_path):
    # box on the frame at 12.0 s, interval [10 s, 20 s) labeled mud
    spec = FixtureSpec(
        n_frames=25,
        frame_width=60,
        frame_height=40,
        fps=30.0,
        frame_step=30,
        substrate_track=((10_000, 20_000, ("mud",)),),
        planted_boxes=(PlantedBox(12 * 30, 5, 5, 10, 8, "urchin"),),
    )
    _, dataset = build_dataset(tmp_path, spec)
    assert dataset.boxes[0].substrate.canonical == "mud"


def test_uncovered_frames_resolve_unknown(tmp_path):
    spec = FixtureSpec(
        n_frames=4,
        frame_width=60,
        frame_height=40,
        fps=30.0,
        frame_step=30,
        substrate_track=((0, 1000, ("mud",)),),
        planted_boxes=(PlantedBox(90, 5, 5, 10, 8, "urchin"),),
    )
    _, dataset = build_dataset(tmp_path, spec)
    assert dataset.boxes[0].substrate == UNKNOWN_COMBO


def test_half_open_interval_boundary():
    track = SubstrateTrack(
        [
            SubstrateInterval("v", Timestamp(1000), Timestamp(2000), canonical_combo(["mud"])),
            SubstrateInterval("v", Timestamp(2000), Timestamp(3000), canonical_combo(["rock"])),
        ]
    )
    assert track.combo_at("v", 1999).canonical == "mud"
    assert track.combo_at("v", 2000).canonical == "rock"
    assert track.combo_at("v", 3000) == UNKNOWN_COMBO
    assert track.combo_at("other", 1500) == UNKNOWN_COMBO


def test_adjacent_intervals_do_not_overlap():
    SubstrateTrack(
        [
            SubstrateInterval("v", Timestamp(0), Timestamp(10), canonical_combo(["mud"])),
            SubstrateInterval("v", Timestamp(10), Timestamp(20), canonical_combo(["rock"])),
        ]
    )


def test_overlapping_intervals_raise():
    with pytest.raises(OverlapError):
        SubstrateTrack(
            [
                SubstrateInterval("v", Timestamp(0), Timestamp(11), canonical_combo(["mud"])),
                SubstrateInterval("v", Timestamp(10), Timestamp(20), canonical_combo(["rock"])),
            ]
        )


def test_fixture_determinism(tmp_path):
    spec = small_spec(seed=7)
    make_fixture(spec, tmp_path / "a")
    make_fixture(spec, tmp_path / "b")
    assert dir_digest(tmp_path / "a") == dir_digest(tmp_path / "b")
    make_fixture(small_spec(seed=8), tmp_path / "c")
    assert dir_digest(tmp_path / "a") != dir_digest(tmp_path / "c")


def test_zero_planted_boxes_header_only(tmp_path):
    root = make_fixture(small_spec(planted=()), tmp_path / "ds")
    lines = Path(root.boxes_path).read_text().strip().splitlines()
    assert lines == ["box_id,video_id,frame_index,x,y,w,h,species"]


def test_planted_boxes_match_schedule(tmp_path):
    planted = tuple(
        PlantedBox(30 * i, 4 + i, 6, 10, 7, "urchin") for i in range(5)
    )
    root = make_fixture(small_spec(planted=planted), tmp_path / "ds")
    with open(root.boxes_path, newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == 5
    for row, box in zip(rows, planted):
        assert (int(row["frame_index"]), int(row["x"]), int(row["y"])) == (
            box.frame_index,
            box.x,
            box.y,
        )
        assert (int(row["w"]), int(row["h"]), row["species"]) == (box.w, box.h, box.species)


@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(data=st.data())
def test_fixture_load_round_trip(tmp_path_factory, data):
    n_frames = data.draw(st.integers(2, 8), label="n_frames")
    width = data.draw(st.integers(30, 80), label="width")
    height = data.draw(st.integers(30, 80), label="height")
    n_boxes = data.draw(st.integers(0, 5), label="n_boxes")
    planted = []
    for i in range(n_boxes):
        frame = data.draw(st.integers(0, n_frames - 1), label=f"frame{i}") * 30
        w = data.draw(st.integers(1, width // 2), label=f"w{i}")
        h = data.draw(st.integers(1, height // 2), label=f"h{i}")
        x = data.draw(st.integers(0, width - w), label=f"x{i}")
        y = data.draw(st.integers(0, height - h), label=f"y{i}")
        planted.append(PlantedBox(frame, x, y, w, h, "urchin"))
    boundary = data.draw(st.integers(500, n_frames * 1000 - 500), label="boundary")
    spec = FixtureSpec(
        n_frames=n_frames,
        frame_width=width,
        frame_height=height,
        fps=30.0,
        frame_step=30,
        substrate_track=((0, boundary, ("mud",)), (boundary, n_frames * 1000, ("cobble", "mud"))),
        planted_boxes=tuple(planted),
        cabof_events=((data.draw(st.integers(0, n_frames * 1000), label="cabof_t"), "urchin", 1),),
        seed=data.draw(st.integers(0, 2**32), label="seed"),
    )
    tmp = tmp_path_factory.mktemp("roundtrip")
    root, dataset = build_dataset(tmp, spec)

    assert len(dataset.frames) == n_frames
    assert len(dataset.boxes) == len(planted)
    for box, scheduled in zip(dataset.boxes, planted):
        assert box.frame.frame_index == scheduled.frame_index
        assert (box.rect.x, box.rect.y, box.rect.w, box.rect.h) == (
            scheduled.x,
            scheduled.y,
            scheduled.w,
            scheduled.h,
        )
        assert box.species == scheduled.species
        # substrate always resolves to exactly one combo
        expected = "mud" if box.frame.timestamp.millis < boundary else "cobble+mud"
        assert box.substrate.canonical == expected
    assert [c.timestamp.millis for c in dataset.cabof] == [spec.cabof_events[0][0]]


def test_parse_error_on_bad_int(small_dataset):
    spec, root, _ = small_dataset
    lines = Path(root.boxes_path).read_text().splitlines()
    lines[1] = lines[1].replace(lines[1].split(",")[3], "oops", 1)
    Path(root.boxes_path).write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as info:
        load_dataset(root)
    assert "boxes.csv" in str(info.value)
    assert ":2:" in str(info.value)


def test_parse_error_on_bad_header(small_dataset):
    _, root, _ = small_dataset
    lines = Path(root.cabof_path).read_text().splitlines()
    lines[0] = "video,stamp"
    Path(root.cabof_path).write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError):
        load_dataset(root)


def test_parse_error_on_inconsistent_timestamp(small_dataset):
    _, root, _ = small_dataset
    lines = Path(root.frames_manifest_path).read_text().splitlines()
    parts = lines[1].split(",")
    parts[2] = str(int(parts[2]) + 1)
    lines[1] = ",".join(parts)
    Path(root.frames_manifest_path).write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as info:
        load_dataset(root)
    assert "fps" in str(info.value)


def test_missing_image_file(small_dataset):
    _, root, dataset = small_dataset
    target = dataset.store.image_path(dataset.boxes[0].frame)
    target.unlink()
    with pytest.raises(MissingFrameImage):
        load_dataset(root)


def test_box_on_unknown_frame(small_dataset):
    _, root, _ = small_dataset
    with open(root.boxes_path, "a", newline="") as handle:
        csv.writer(handle).writerow([999, "vidA", 424242, 0, 0, 5, 5, "urchin"])
    with pytest.raises(MissingFrameImage):
        load_dataset(root)


def test_duplicate_box_id(small_dataset):
    _, root, _ = small_dataset
    lines = Path(root.boxes_path).read_text().splitlines()
    lines.append(lines[1])
    Path(root.boxes_path).write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as info:
        load_dataset(root)
    assert "duplicate box_id" in str(info.value)


def test_missing_input_file(tmp_path):
    root = DatasetRoot.standard(tmp_path / "nowhere")
    with pytest.raises(FileNotFoundError):
        load_dataset(root)


def test_dimension_mismatch_on_load(small_dataset):
    _, root, dataset = small_dataset
    lines = Path(root.frames_manifest_path).read_text().splitlines()
    parts = lines[1].split(",")
    parts[3] = str(int(parts[3]) + 4)
    lines[1] = ",".join(parts)
    Path(root.frames_manifest_path).write_text("\n".join(lines) + "\n")
    reloaded = load_dataset(root)
    with pytest.raises(DimensionMismatch):
        reloaded.store.load_image(reloaded.frames[0])


def test_store_loads_expected_pixels(small_dataset):
    spec, _, dataset = small_dataset
    image = dataset.store.load_image(dataset.frames[0])
    assert image.shape == (spec.frame_height, spec.frame_width, 3)
    assert image.dtype.name == "uint8"

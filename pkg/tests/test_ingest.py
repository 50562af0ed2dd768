import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egopose.errors import EmptySequenceError, FormatError, LoadError, NonProjectablePointError
from egopose.ingest import (
    RawSequence3D,
    dumps_sequence_2d,
    load_dataset,
    parse_intrinsics,
    parse_sequence_2d,
    parse_sequence_3d,
    project_sequence,
    save_sequence_2d,
    write_sequence_3d,
)
from egopose.pose_core import bbox_from_corners, project_hand, project_point

from conftest import random_record

HEADER2 = '{"version":1,"width":1280,"height":720,"num_frames":2}'


def frame_line(left=True, right=True, n_left=42):
    obj = {
        "left": [float(i) for i in range(n_left)] if left else None,
        "right": [float(i) for i in range(42)] if right else None,
        "obj_bbox": [10, 20, 110, 20, 110, 80, 10, 80],
        "obj_label": 2,
    }
    return json.dumps(obj)


def test_parse_intrinsics_h2o_example():
    cam = parse_intrinsics(io.StringIO("636.66 636.25 635.28 366.87 1280 720\n"))
    assert (cam.width, cam.height) == (1280, 720)
    assert (cam.fx, cam.fy, cam.cx, cam.cy) == (636.66, 636.25, 635.28, 366.87)


def test_parse_intrinsics_unit():
    cam = parse_intrinsics(io.StringIO("1 1 0 0 10 10"))
    assert (cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height) == (1, 1, 0, 0, 10, 10)


@pytest.mark.parametrize("text", ["636.66 636.25 635.28", "1 1 0 0 10 x", "0 1 0 0 10 10", "1 -1 0 0 10 10"])
def test_parse_intrinsics_errors(text):
    with pytest.raises(FormatError, match="line 1"):
        parse_intrinsics(io.StringIO(text))


def test_parse_sequence_2d_schema():
    rec = parse_sequence_2d(io.StringIO("\n".join([HEADER2, frame_line(), frame_line(left=False)]) + "\n"))
    assert len(rec) == 2
    assert rec.frames[0].left.valid and not rec.frames[1].left.valid
    assert np.array_equal(rec.frames[1].left.joints, np.zeros((21, 2)))
    assert rec.frames[0].left.joints[1].tolist() == [2.0, 3.0]
    assert rec.frames[0].object.label == 2


def test_parse_sequence_2d_short_hand_names_line():
    text = "\n".join([HEADER2, frame_line(n_left=40), frame_line()])
    with pytest.raises(FormatError, match="line 2"):
        parse_sequence_2d(io.StringIO(text))


def test_parse_sequence_2d_empty():
    with pytest.raises(EmptySequenceError):
        parse_sequence_2d(io.StringIO('{"version":1,"width":10,"height":10,"num_frames":0}\n'))


def test_parse_sequence_2d_frame_count_mismatch():
    with pytest.raises(FormatError, match="line 3"):
        parse_sequence_2d(io.StringIO(HEADER2 + "\n" + frame_line()))


def test_parse_sequence_2d_rejects_skewed_bbox():
    bad = json.loads(frame_line())
    bad["obj_bbox"] = [10, 20, 110, 25, 110, 80, 10, 80]
    with pytest.raises(FormatError, match="line 2"):
        parse_sequence_2d(io.StringIO("\n".join([HEADER2, json.dumps(bad), frame_line()])))


@pytest.mark.parametrize("name", ["projected.eseq", "synthetic.eseq"])
def test_2d_fixture_round_trip_bytes(fixtures, name):
    text = (fixtures / name).read_text()
    assert dumps_sequence_2d(parse_sequence_2d(io.StringIO(text))) == text


def test_3d_fixture_round_trip_bytes(fixtures):
    text = (fixtures / "raw_seq.eseq3").read_text()
    seq = parse_sequence_3d(io.StringIO(text))
    buf = io.StringIO()
    write_sequence_3d(seq, buf)
    assert buf.getvalue() == text


def test_parse_3d_counts_and_sentinel(fixtures):
    with open(fixtures / "raw_seq.eseq3") as fh:
        seq = parse_sequence_3d(fh)
    f0 = seq.frames[0]
    assert f0.left.joints.shape == (21, 3) and f0.right.joints.shape == (21, 3)
    assert f0.object.corners.shape == (8, 3)
    # frame 2 of the fixture was written with an absent left hand
    assert not seq.frames[2].left.valid
    assert np.array_equal(seq.frames[2].left.joints, np.zeros((21, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_2d_round_trip_random_records(seed):
    rec = random_record(np.random.default_rng(seed), action_id=None)
    rec.source_id = ""
    text = dumps_sequence_2d(rec)
    back = parse_sequence_2d(io.StringIO(text))
    assert back == rec
    assert dumps_sequence_2d(back) == text


def test_project_sequence_matches_manual_composition(fixtures):
    cam = parse_intrinsics(open(fixtures / "intrinsics.txt"))
    with open(fixtures / "raw_seq.eseq3") as fh:
        seq = parse_sequence_3d(fh)
    frames = project_sequence(seq, cam)
    f = seq.frames[0]
    assert frames[0].left == project_hand(f.left, cam)
    assert frames[0].right == project_hand(f.right, cam)
    manual_box = bbox_from_corners([project_point(c, cam) for c in f.object.corners], f.object.label)
    assert frames[0].object == manual_box
    assert (frames[0].width, frames[0].height) == (1280, 720)
    # the stored 2D fixture was produced by this path
    with open(fixtures / "projected.eseq") as fh:
        assert parse_sequence_2d(fh).frames == frames


def test_project_sequence_all_invalid_hands(fixtures):
    cam = parse_intrinsics(open(fixtures / "intrinsics.txt"))
    seq = parse_sequence_3d(open(fixtures / "raw_seq.eseq3"))
    from egopose.ingest import Frame3D
    from egopose.pose_core import HandPose3D

    stripped = RawSequence3D([Frame3D(HandPose3D.absent(), HandPose3D.absent(), f.object) for f in seq.frames],
                             seq.width, seq.height)
    for fr in project_sequence(stripped, cam):
        assert not fr.left.valid and not fr.right.valid
        assert fr.object.corners[0, 0] <= fr.object.corners[1, 0]


def test_project_sequence_names_frame(fixtures):
    cam = parse_intrinsics(open(fixtures / "intrinsics.txt"))
    seq = parse_sequence_3d(open(fixtures / "bad_depth.eseq3"))
    with pytest.raises(NonProjectablePointError, match="frame 3"):
        project_sequence(seq, cam)


def _write_dataset(tmp_path, rows, rng):
    lines = ["sequence_path,action_id,split"]
    for path, action, split in rows:
        full = tmp_path / path
        full.parent.mkdir(parents=True, exist_ok=True)
        save_sequence_2d(random_record(rng, T=5), full)
        lines.append(f"{path},{action},{split}")
    (tmp_path / "manifest.csv").write_text("\n".join(lines) + "\n")
    return tmp_path / "manifest.csv"


def test_load_dataset_one_per_split(tmp_path, rng):
    manifest = _write_dataset(tmp_path, [("a.eseq", 0, "train"), ("b.eseq", 1, "val"), ("c.eseq", 2, "test")], rng)
    ds = load_dataset(manifest)
    assert [len(ds.split(s)) for s in ("train", "val", "test")] == [1, 1, 1]
    assert ds.num_classes == 3
    assert ds.split("val")[0].action_id == 1 and ds.split("val")[0].source_id == "b.eseq"


def test_load_dataset_missing_file(tmp_path, rng):
    manifest = _write_dataset(tmp_path, [("a.eseq", 0, "train")], rng)
    manifest.write_text(manifest.read_text() + "missing.eseq,0,test\n")
    with pytest.raises(LoadError, match="missing.eseq"):
        load_dataset(manifest)


def test_load_dataset_duplicate_path(tmp_path, rng):
    manifest = _write_dataset(tmp_path, [("a.eseq", 0, "train")], rng)
    manifest.write_text(manifest.read_text() + "a.eseq,0,test\n")
    with pytest.raises(LoadError, match="duplicate"):
        load_dataset(manifest)


def test_load_dataset_label_over_declared_classes(tmp_path, rng):
    manifest = _write_dataset(tmp_path, [("a.eseq", 4, "train")], rng)
    with pytest.raises(LoadError):
        load_dataset(manifest, num_classes=3)
    assert load_dataset(manifest, num_classes=36).num_classes == 36


def test_load_dataset_deterministic(tmp_path, rng):
    rows = [(f"s{i}.eseq", i % 3, ("train", "val", "test")[i % 3]) for i in range(9)]
    manifest = _write_dataset(tmp_path, rows, rng)
    a, b = load_dataset(manifest), load_dataset(manifest)
    for s in ("train", "val", "test"):
        assert [r.source_id for r in a.split(s)] == [r.source_id for r in b.split(s)]
        assert all(x == y for x, y in zip(a.split(s), b.split(s)))

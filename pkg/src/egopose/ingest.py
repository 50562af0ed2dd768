"""On-disk formats: intrinsics text, ``.eseq``/``.eseq3`` sequences, CSV manifests.

Sequence files are line oriented. Line 1 is a JSON header
``{"version":1,"width":W,"height":H,"num_frames":T}``; each following line is one
frame object. The writers emit compact JSON with shortest-repr floats, so a file
produced by a writer parses and re-writes byte for byte.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from .errors import (
    ConfigError,
    EmptySequenceError,
    FormatError,
    InvalidGeometryError,
    LoadError,
    NonProjectablePointError,
)
from .pose_core import (
    NUM_JOINTS,
    CameraIntrinsics,
    FramePose,
    HandPose2D,
    HandPose3D,
    ObjectPose2D,
    ObjectPose3D,
    project_hand,
    project_object,
)

SPLITS = ("train", "val", "test")
MANIFEST_HEADER = ["sequence_path", "action_id", "split"]


@dataclass(eq=False)
class SequenceRecord:
    frames: list[FramePose]
    action_id: int | None = None
    source_id: str = ""

    def __post_init__(self):
        if len(self.frames) == 0:
            raise EmptySequenceError("sequence has no frames")
        w, h = self.frames[0].width, self.frames[0].height
        for f in self.frames:
            if (f.width, f.height) != (w, h):
                raise FormatError(f"frame size {f.width}x{f.height} differs from {w}x{h}")

    def __len__(self):
        return len(self.frames)

    def __eq__(self, other):
        if not isinstance(other, SequenceRecord):
            return NotImplemented
        return (
            self.action_id == other.action_id
            and self.source_id == other.source_id
            and len(self.frames) == len(other.frames)
            and all(a == b for a, b in zip(self.frames, other.frames))
        )

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height


@dataclass(frozen=True, eq=False)
class Frame3D:
    left: HandPose3D
    right: HandPose3D
    object: ObjectPose3D

    def __eq__(self, other):
        if not isinstance(other, Frame3D):
            return NotImplemented
        return self.left == other.left and self.right == other.right and self.object == other.object


@dataclass(eq=False)
class RawSequence3D:
    frames: list[Frame3D]
    width: int
    height: int

    def __eq__(self, other):
        if not isinstance(other, RawSequence3D):
            return NotImplemented
        return (
            (self.width, self.height) == (other.width, other.height)
            and len(self.frames) == len(other.frames)
            and all(a == b for a, b in zip(self.frames, other.frames))
        )


@dataclass(frozen=True)
class ManifestEntry:
    sequence_path: str
    action_id: int
    split: str


@dataclass
class Manifest:
    entries: list[ManifestEntry]


@dataclass
class Dataset:
    splits: dict[str, list[SequenceRecord]]
    num_classes: int
    class_names: list[str] | None = None

    def split(self, name: str) -> list[SequenceRecord]:
        return self.splits.get(name, [])


# ---------------------------------------------------------------- intrinsics


def parse_intrinsics(stream: IO[str]) -> CameraIntrinsics:
    lines = [(i, ln.strip()) for i, ln in enumerate(stream.read().splitlines(), 1) if ln.strip()]
    if len(lines) != 1:
        raise FormatError(f"intrinsics must be a single line, found {len(lines)} non-empty lines")
    lineno, text = lines[0]
    fields = text.split()
    if len(fields) != 6:
        raise FormatError(f"expected 6 fields 'fx fy cx cy width height', got {len(fields)}", lineno)
    try:
        fx, fy, cx, cy = (float(v) for v in fields[:4])
        width, height = (float(v) for v in fields[4:])
    except ValueError as e:
        raise FormatError(f"non-numeric intrinsics field: {e}", lineno) from None
    if not all(math.isfinite(v) for v in (fx, fy, cx, cy, width, height)):
        raise FormatError("intrinsics must be finite", lineno)
    if width != int(width) or height != int(height):
        raise FormatError(f"image size must be integral, got {width}x{height}", lineno)
    try:
        return CameraIntrinsics(fx, fy, cx, cy, int(width), int(height))
    except InvalidGeometryError as e:
        raise FormatError(str(e), lineno) from None


def write_intrinsics(cam: CameraIntrinsics, stream: IO[str]) -> None:
    stream.write(f"{cam.fx!r} {cam.fy!r} {cam.cx!r} {cam.cy!r} {cam.width} {cam.height}\n")


# ---------------------------------------------------------------- sequences


def _dump(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def _numbers(value, n: int, what: str, lineno: int) -> np.ndarray:
    if not isinstance(value, list) or len(value) != n:
        got = len(value) if isinstance(value, list) else type(value).__name__
        raise FormatError(f"'{what}' needs {n} numbers, got {got}", lineno)
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise FormatError(f"'{what}' contains non-numeric value {v!r}", lineno)
    return np.array(value, dtype=np.float64)


def _label(value, lineno: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise FormatError(f"'obj_label' must be an integer >= 0, got {value!r}", lineno)
    return value


def _read_header(lines: list[str]) -> tuple[int, int, int]:
    if not lines:
        raise FormatError("missing header line", 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise FormatError(f"header is not JSON: {e.msg}", 1) from None
    if not isinstance(header, dict) or set(header) != {"version", "width", "height", "num_frames"}:
        raise FormatError("header must have exactly keys version, width, height, num_frames", 1)
    if header["version"] != 1:
        raise FormatError(f"unsupported version {header['version']!r}", 1)
    for key in ("width", "height", "num_frames"):
        v = header[key]
        if isinstance(v, bool) or not isinstance(v, int) or v < 0:
            raise FormatError(f"header '{key}' must be a non-negative integer", 1)
    if header["width"] == 0 or header["height"] == 0:
        raise FormatError("header width/height must be positive", 1)
    T = header["num_frames"]
    if T == 0:
        raise EmptySequenceError("sequence declares 0 frames", 1)
    body = lines[1:]
    if len(body) != T:
        raise FormatError(f"header declares {T} frames, file has {len(body)}", min(len(body), T) + 2)
    return header["width"], header["height"], T


def _frame_object(line: str, lineno: int, keys: set[str]) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise FormatError(f"frame is not JSON: {e.msg}", lineno) from None
    if not isinstance(obj, dict) or set(obj) != keys:
        raise FormatError(f"frame must have exactly keys {sorted(keys)}", lineno)
    return obj


def parse_sequence_2d(stream: IO[str]) -> SequenceRecord:
    lines = stream.read().splitlines()
    width, height, _ = _read_header(lines)
    frames = []
    for lineno, line in enumerate(lines[1:], start=2):
        obj = _frame_object(line, lineno, {"left", "right", "obj_bbox", "obj_label"})
        hands = []
        for side in ("left", "right"):
            if obj[side] is None:
                hands.append(HandPose2D.absent())
            else:
                hands.append(HandPose2D(_numbers(obj[side], 2 * NUM_JOINTS, side, lineno).reshape(NUM_JOINTS, 2)))
        corners = _numbers(obj["obj_bbox"], 8, "obj_bbox", lineno).reshape(4, 2)
        try:
            box = ObjectPose2D(corners, _label(obj["obj_label"], lineno))
        except InvalidGeometryError as e:
            raise FormatError(str(e), lineno) from None
        frames.append(FramePose(hands[0], hands[1], box, width, height))
    return SequenceRecord(frames)


def write_sequence_2d(rec: SequenceRecord, stream: IO[str]) -> None:
    header = {"version": 1, "width": rec.width, "height": rec.height, "num_frames": len(rec)}
    stream.write(_dump(header) + "\n")
    for f in rec.frames:
        line = {
            "left": f.left.joints.ravel().tolist() if f.left.valid else None,
            "right": f.right.joints.ravel().tolist() if f.right.valid else None,
            "obj_bbox": f.object.corners.ravel().tolist(),
            "obj_label": f.object.label,
        }
        stream.write(_dump(line) + "\n")


def parse_sequence_3d(stream: IO[str]) -> RawSequence3D:
    lines = stream.read().splitlines()
    width, height, _ = _read_header(lines)
    frames = []
    for lineno, line in enumerate(lines[1:], start=2):
        obj = _frame_object(line, lineno, {"left3d", "right3d", "obj_corners3d", "obj_label"})
        hands = []
        for side in ("left3d", "right3d"):
            if obj[side] is None:
                hands.append(HandPose3D.absent())
            else:
                hands.append(HandPose3D(_numbers(obj[side], 3 * NUM_JOINTS, side, lineno).reshape(NUM_JOINTS, 3)))
        corners = _numbers(obj["obj_corners3d"], 24, "obj_corners3d", lineno).reshape(8, 3)
        frames.append(Frame3D(hands[0], hands[1], ObjectPose3D(corners, _label(obj["obj_label"], lineno))))
    return RawSequence3D(frames, width, height)


def write_sequence_3d(seq: RawSequence3D, stream: IO[str]) -> None:
    header = {"version": 1, "width": seq.width, "height": seq.height, "num_frames": len(seq.frames)}
    stream.write(_dump(header) + "\n")
    for f in seq.frames:
        line = {
            "left3d": f.left.joints.ravel().tolist() if f.left.valid else None,
            "right3d": f.right.joints.ravel().tolist() if f.right.valid else None,
            "obj_corners3d": f.object.corners.ravel().tolist(),
            "obj_label": f.object.label,
        }
        stream.write(_dump(line) + "\n")


def read_sequence_2d(path) -> SequenceRecord:
    with open(path, encoding="utf-8") as fh:
        return parse_sequence_2d(fh)


def save_sequence_2d(rec: SequenceRecord, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_sequence_2d(rec, fh)


def project_sequence(seq: RawSequence3D, cam: CameraIntrinsics) -> list[FramePose]:
    frames = []
    for idx, f in enumerate(seq.frames):
        try:
            left = project_hand(f.left, cam)
            right = project_hand(f.right, cam)
            box = project_object(f.object, cam)
        except NonProjectablePointError as e:
            raise NonProjectablePointError(f"frame {idx}: {e}") from None
        frames.append(FramePose(left, right, box, cam.width, cam.height))
    return frames


# ---------------------------------------------------------------- manifests


def parse_manifest(stream: IO[str]) -> Manifest:
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("manifest is empty", 1) from None
    if header != MANIFEST_HEADER:
        raise FormatError(f"manifest header must be {','.join(MANIFEST_HEADER)}", 1)
    entries, seen = [], set()
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 3:
            raise FormatError(f"expected 3 columns, got {len(row)}", lineno)
        path, action, split = row
        try:
            action_id = int(action)
        except ValueError:
            raise FormatError(f"action_id {action!r} is not an integer", lineno) from None
        if action_id < 0:
            raise FormatError(f"action_id must be >= 0, got {action_id}", lineno)
        if split not in SPLITS:
            raise FormatError(f"split must be one of {SPLITS}, got {split!r}", lineno)
        if path in seen:
            raise LoadError(f"duplicate sequence path in manifest: {path}")
        seen.add(path)
        entries.append(ManifestEntry(path, action_id, split))
    return Manifest(entries)


def write_manifest(manifest: Manifest, stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for e in manifest.entries:
        writer.writerow([e.sequence_path, e.action_id, e.split])


def load_dataset(manifest_path, root_dir=None, num_classes: int | None = None,
                 class_names: list[str] | None = None) -> Dataset:
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise LoadError(f"manifest not found: {manifest_path}")
    root = Path(root_dir) if root_dir is not None else manifest_path.parent
    with open(manifest_path, encoding="utf-8", newline="") as fh:
        manifest = parse_manifest(fh)
    max_label = max((e.action_id for e in manifest.entries), default=-1)
    if num_classes is None:
        num_classes = max_label + 1
    elif num_classes <= max_label:
        raise LoadError(f"action_id {max_label} >= declared num_classes {num_classes}")
    if num_classes < 1:
        raise ConfigError("dataset has no classes")
    if class_names is not None and len(class_names) != num_classes:
        raise ConfigError(f"{len(class_names)} class names for {num_classes} classes")

    splits: dict[str, list[SequenceRecord]] = {s: [] for s in SPLITS}
    for e in manifest.entries:
        path = root / e.sequence_path
        if not path.is_file():
            raise LoadError(f"sequence file not found: {path}")
        try:
            rec = read_sequence_2d(path)
        except FormatError as err:
            raise type(err)(f"{path}: {err}") from None
        rec.action_id = e.action_id
        rec.source_id = e.sequence_path
        splits[e.split].append(rec)
    return Dataset(splits, num_classes, class_names)


def iter_files(directory, suffix: str) -> Iterable[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.is_file() and p.suffix == suffix)


def dumps_sequence_2d(rec: SequenceRecord) -> str:
    buf = io.StringIO()
    write_sequence_2d(rec, buf)
    return buf.getvalue()

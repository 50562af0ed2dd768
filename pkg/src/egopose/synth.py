"""Synthetic pose sequences with known class structure.

Class ``k`` of ``C`` moves along direction ``2*pi*k/C`` at a class-specific speed.
The left hand follows that direction, the right hand its horizontal mirror (so
a horizontally flipped sequence still belongs to the same class), and the object
box drifts opposite to the left hand. ``signal_source`` decides which parts move:
static parts, and the object label when the object carries no signal, are
identical across classes for the same sample index.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .ingest import SPLITS, Dataset, Manifest, ManifestEntry, SequenceRecord, save_sequence_2d, write_manifest
from .pose_core import NUM_JOINTS, FramePose, HandPose2D, ObjectPose2D

SIGNAL_SOURCES = ("hands_only", "object_only", "both")


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 6
    per_class_train: int = 50
    per_class_val: int = 10
    per_class_test: int = 10
    frames_min: int = 30
    frames_max: int = 80
    signal_source: str = "both"
    noise_sigma: float = 5.0
    width: int = 1280
    height: int = 720
    num_object_classes: int = 8
    speed_min: float = 1.5
    speed_max: float = 2.5
    start_jitter: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1:
            raise ConfigError("synth.num_classes must be >= 1")
        if min(self.per_class_train, self.per_class_val, self.per_class_test) < 0:
            raise ConfigError("synth per-class counts must be >= 0")
        if not 1 <= self.frames_min <= self.frames_max:
            raise ConfigError("synth frame range must satisfy 1 <= frames_min <= frames_max")
        if self.signal_source not in SIGNAL_SOURCES:
            raise ConfigError(f"synth.signal_source must be one of {SIGNAL_SOURCES}")
        if self.noise_sigma < 0:
            raise ConfigError("synth.noise_sigma must be >= 0")
        if self.width < 1 or self.height < 1 or self.num_object_classes < 1:
            raise ConfigError("synth image size and num_object_classes must be positive")

    def per_class(self, split: str) -> int:
        return {"train": self.per_class_train, "val": self.per_class_val, "test": self.per_class_test}[split]

    def to_dict(self) -> dict:
        return asdict(self)


def _hand_shape() -> np.ndarray:
    """Right-hand skeleton in pixels relative to the wrist: wrist + 5 fingers x 4 joints."""
    joints = [(0.0, 0.0)]
    for f, angle in enumerate(np.linspace(-60.0, 40.0, 5)):
        a = math.radians(angle - 90.0)
        base = 25.0 if f else 15.0
        for j in range(1, 5):
            r = base + 15.0 * j
            joints.append((r * math.cos(a), r * math.sin(a)))
    return np.array(joints)


RIGHT_SHAPE = _hand_shape()
LEFT_SHAPE = RIGHT_SHAPE * np.array([-1.0, 1.0])


def class_velocity(cfg: SynthConfig, k: int) -> np.ndarray:
    """Per-frame displacement of the left hand for class ``k``."""
    theta = 2 * math.pi * k / cfg.num_classes
    speed = cfg.speed_min + (cfg.speed_max - cfg.speed_min) * k / max(1, cfg.num_classes - 1)
    return speed * np.array([math.cos(theta), math.sin(theta)])


def templates(cfg: SynthConfig) -> np.ndarray:
    """Expected mean displacement [left(2) | right(2) | box centre(2)] per class."""
    rows = []
    for k in range(cfg.num_classes):
        d = class_velocity(cfg, k)
        hands = cfg.signal_source in ("hands_only", "both")
        obj = cfg.signal_source in ("object_only", "both")
        left = d if hands else np.zeros(2)
        right = d * np.array([-1.0, 1.0]) if hands else np.zeros(2)
        box = -d if obj else np.zeros(2)
        rows.append(np.concatenate([left, right, box]))
    return np.array(rows)


def make_sequence(cfg: SynthConfig, k: int, split: str, i: int) -> SequenceRecord:
    split_no = SPLITS.index(split)
    shared = np.random.default_rng([cfg.seed, split_no, i, 0])
    hand_noise = np.random.default_rng([cfg.seed, split_no, i, 1])
    W, H = cfg.width, cfg.height
    T = int(shared.integers(cfg.frames_min, cfg.frames_max + 1))
    jitter = shared.normal(0.0, cfg.start_jitter, size=(3, 2))
    box_noise = shared.normal(0.0, cfg.noise_sigma, size=(T, 4)) if cfg.noise_sigma else np.zeros((T, 4))
    joint_noise = hand_noise.normal(0.0, cfg.noise_sigma, size=(T, 2, NUM_JOINTS, 2)) if cfg.noise_sigma \
        else np.zeros((T, 2, NUM_JOINTS, 2))

    d = class_velocity(cfg, k)
    hands_move = cfg.signal_source in ("hands_only", "both")
    obj_moves = cfg.signal_source in ("object_only", "both")
    label = k % cfg.num_object_classes if obj_moves else 0

    left0 = np.array([0.35 * W, 0.5 * H]) + jitter[0]
    right0 = np.array([0.65 * W, 0.5 * H]) + jitter[1]
    box0 = np.array([0.5 * W, 0.55 * H]) + jitter[2]
    half = np.array([70.0, 50.0])
    t = np.arange(T)[:, None]
    left_path = left0 + hands_move * t * d
    right_path = right0 + hands_move * t * d * np.array([-1.0, 1.0])
    box_path = box0 - obj_moves * t * d

    bounds = np.array([W, H], dtype=np.float64)
    frames = []
    for n in range(T):
        left = np.clip(left_path[n] + LEFT_SHAPE + joint_noise[n, 0], 0.0, bounds)
        right = np.clip(right_path[n] + RIGHT_SHAPE + joint_noise[n, 1], 0.0, bounds)
        x0, y0 = box_path[n] - half + box_noise[n, :2]
        x1, y1 = box_path[n] + half + box_noise[n, 2:]
        x0, x1 = sorted((min(max(x0, 0.0), W), min(max(x1, 0.0), W)))
        y0, y1 = sorted((min(max(y0, 0.0), H), min(max(y1, 0.0), H)))
        frames.append(FramePose(HandPose2D(left), HandPose2D(right),
                                ObjectPose2D.from_extent(x0, y0, x1, y1, label), W, H))
    return SequenceRecord(frames, k, f"{split}/c{k:02d}_{i:04d}.eseq")


def generate_records(cfg: SynthConfig) -> Dataset:
    splits = {s: [make_sequence(cfg, k, s, i) for k in range(cfg.num_classes) for i in range(cfg.per_class(s))]
              for s in SPLITS}
    return Dataset(splits, cfg.num_classes)


def generate(cfg: SynthConfig, out_dir) -> Path:
    """Write ``.eseq`` files plus ``manifest.csv`` under ``out_dir``; returns the manifest path."""
    out = Path(out_dir)
    data = generate_records(cfg)
    entries = []
    for split in SPLITS:
        if data.split(split):
            (out / split).mkdir(parents=True, exist_ok=True)
        for rec in data.split(split):
            save_sequence_2d(rec, out / rec.source_id)
            entries.append(ManifestEntry(rec.source_id, rec.action_id, split))
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.csv"
    with open(manifest_path, "w", encoding="utf-8", newline="") as fh:
        write_manifest(Manifest(entries), fh)
    return manifest_path


def mean_displacement(rec: SequenceRecord) -> np.ndarray:
    """Mean frame-to-frame displacement of left/right hand centroids and box centre."""
    def track(pos):
        return (pos[-1] - pos[0]) / max(1, len(pos) - 1)

    left = np.array([f.left.joints.mean(axis=0) for f in rec.frames])
    right = np.array([f.right.joints.mean(axis=0) for f in rec.frames])
    box = np.array([f.object.corners.mean(axis=0) for f in rec.frames])
    return np.concatenate([track(left), track(right), track(box)])


def bayes_separability_check(cfg: SynthConfig, splits: tuple[str, ...] = ("val", "test")) -> dict:
    """Accuracy of a nearest-template classifier on freshly generated data.

    Works on raw trajectories, independent of the feature pipeline and model,
    and so bounds what any classifier can be expected to reach.
    """
    data = generate_records(cfg)
    tmpl = templates(cfg)
    records = [r for s in splits for r in data.split(s)]
    if not records:
        return {"accuracy": float("nan"), "n_samples": 0}
    feats = np.array([mean_displacement(r) for r in records])
    dist = np.linalg.norm(feats[:, None, :] - tmpl[None, :, :], axis=-1)
    pred = np.argmin(dist, axis=1)
    truth = np.array([r.action_id for r in records])
    return {"accuracy": float(np.mean(pred == truth)), "n_samples": len(records),
            "chance": 1.0 / cfg.num_classes, "splits": list(splits)}

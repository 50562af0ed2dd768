"""Frame embedding, temporal sampling, augmentation and ablation masking.

A frame becomes a 93-vector laid out as::

    [ left hand x1,y1..x21,y21 | right hand (42) | bbox TL,TR,BR,BL (8) | object label (1) ]

with coordinates divided by the image size and clamped to [0, 1], absent hands
zero-filled, and the object label scaled to ``label / num_object_classes``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptySequenceError, LabelRangeError, ShapeError, UsageError
from .ingest import SequenceRecord
from .pose_core import FramePose, HandPose2D, ObjectPose2D

FEATURE_DIM = 93
SEQ_LEN = 40
LEFT = slice(0, 42)
RIGHT = slice(42, 84)
BBOX = slice(84, 92)
LABEL = slice(92, 93)


@dataclass(frozen=True)
class MaskConfig:
    use_left: bool = True
    use_right: bool = True
    use_bbox: bool = True
    use_label: bool = True

    def column_mask(self) -> np.ndarray:
        keep = np.ones(FEATURE_DIM)
        for used, cols in ((self.use_left, LEFT), (self.use_right, RIGHT),
                           (self.use_bbox, BBOX), (self.use_label, LABEL)):
            if not used:
                keep[cols] = 0.0
        return keep

    def spec(self) -> str:
        tokens = []
        if self.use_left and self.use_right:
            tokens.append("hands")
        elif self.use_left:
            tokens.append("left")
        elif self.use_right:
            tokens.append("right")
        if self.use_bbox:
            tokens.append("bbox")
        if self.use_label:
            tokens.append("label")
        return "+".join(tokens) or "none"


@dataclass(eq=False)
class SequenceTensor:
    rows: np.ndarray  # (SEQ_LEN, FEATURE_DIM)
    action_id: int | None

    def __eq__(self, other):
        if not isinstance(other, SequenceTensor):
            return NotImplemented
        return self.action_id == other.action_id and np.array_equal(self.rows, other.rows)


def mask_apply(features: np.ndarray, mask: MaskConfig) -> np.ndarray:
    return features * mask.column_mask()


def _hand_block(hand: HandPose2D, width: int, height: int) -> np.ndarray:
    if not hand.valid:
        return np.zeros(42)
    xy = hand.joints / np.array([width, height], dtype=np.float64)
    return np.clip(xy, 0.0, 1.0).ravel()


def embed_frame(frame: FramePose, num_object_classes: int) -> np.ndarray:
    if frame.object.label >= num_object_classes:
        raise LabelRangeError(f"object label {frame.object.label} >= num_object_classes {num_object_classes}")
    if frame.width <= 0 or frame.height <= 0:
        raise ShapeError(f"frame size must be positive, got {frame.width}x{frame.height}")
    scale = np.array([frame.width, frame.height], dtype=np.float64)
    box = np.clip(frame.object.corners / scale, 0.0, 1.0).ravel()
    return np.concatenate([
        _hand_block(frame.left, frame.width, frame.height),
        _hand_block(frame.right, frame.width, frame.height),
        box,
        [frame.object.label / num_object_classes],
    ])


def sample_indices(T: int, n: int = SEQ_LEN, mode: str = "equal",
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """Pick ``n`` frame indices from a sequence of ``T`` frames.

    ``equal`` takes ``floor(i*T/n)``. ``random`` draws with replacement when the
    sequence is shorter than ``n`` and without replacement otherwise; the draw
    is sorted so temporal order survives.
    """
    if T < 1:
        raise EmptySequenceError("cannot sample from an empty sequence")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if mode == "equal":
        return (np.arange(n) * T) // n
    if mode == "random":
        if rng is None:
            raise ValueError("random sampling needs an rng")
        idx = rng.choice(T, size=n, replace=T < n)
        return np.sort(idx)
    raise ValueError(f"unknown sampling mode {mode!r}")


def build_sequence_tensor(rec: SequenceRecord, indices, mask: MaskConfig = MaskConfig(),
                          num_object_classes: int = 8) -> SequenceTensor:
    indices = np.asarray(indices)
    if indices.size and (indices.min() < 0 or indices.max() >= len(rec)):
        raise IndexError(f"frame index out of range for sequence of length {len(rec)}")
    rows = np.stack([embed_frame(rec.frames[i], num_object_classes) for i in indices])
    return SequenceTensor(mask_apply(rows, mask), rec.action_id)


# ---------------------------------------------------------------- augmentation


def _mirror_hand(hand: HandPose2D, width: int) -> HandPose2D:
    if not hand.valid:
        return hand
    joints = hand.joints.copy()
    joints[:, 0] = width - joints[:, 0]
    return HandPose2D(joints)


def _mirror_box(box: ObjectPose2D, width: int) -> ObjectPose2D:
    x0, y0, x1, y1 = box.extent
    return ObjectPose2D.from_extent(width - x1, y0, width - x0, y1, box.label)


def hflip_frame(frame: FramePose) -> FramePose:
    w = frame.width
    # a mirrored left hand is a right hand
    return FramePose(
        left=_mirror_hand(frame.right, w),
        right=_mirror_hand(frame.left, w),
        object=_mirror_box(frame.object, w),
        width=frame.width,
        height=frame.height,
    )


def hflip(rec: SequenceRecord) -> SequenceRecord:
    return SequenceRecord([hflip_frame(f) for f in rec.frames], rec.action_id, rec.source_id)


def _crop_hand(hand: HandPose2D, x0: float, y0: float, w: int, h: int) -> HandPose2D:
    if not hand.valid:
        return hand
    joints = hand.joints - np.array([x0, y0])
    joints[:, 0] = np.clip(joints[:, 0], 0.0, w)
    joints[:, 1] = np.clip(joints[:, 1], 0.0, h)
    return HandPose2D(joints)


def crop_window(rec: SequenceRecord, x0: int, y0: int, w: int, h: int) -> SequenceRecord:
    """Re-express every frame in the coordinates of one fixed window."""
    frames = []
    for f in rec.frames:
        bx0, by0, bx1, by1 = f.object.extent
        box = ObjectPose2D.from_extent(
            min(max(bx0 - x0, 0.0), w), min(max(by0 - y0, 0.0), h),
            min(max(bx1 - x0, 0.0), w), min(max(by1 - y0, 0.0), h),
            f.object.label,
        )
        frames.append(FramePose(_crop_hand(f.left, x0, y0, w, h), _crop_hand(f.right, x0, y0, w, h), box, w, h))
    return SequenceRecord(frames, rec.action_id, rec.source_id)


def random_crop(rec: SequenceRecord, rng: np.random.Generator, min_scale: float = 0.7) -> SequenceRecord:
    """Spatial crop: one window per sequence, scale drawn independently per axis."""
    if not 0 < min_scale <= 1:
        raise ValueError(f"min_scale must lie in (0, 1], got {min_scale}")
    W, H = rec.width, rec.height
    sx, sy = rng.uniform(min_scale, 1.0, size=2)
    w = max(1, min(W, int(round(sx * W))))
    h = max(1, min(H, int(round(sy * H))))
    x0 = int(rng.integers(0, W - w + 1))
    y0 = int(rng.integers(0, H - h + 1))
    return crop_window(rec, x0, y0, w, h)


def temporal_crop(rec: SequenceRecord, rng: np.random.Generator, min_scale: float = 0.7) -> SequenceRecord:
    """Keep one contiguous run covering a fraction in [min_scale, 1] of the frames."""
    if not 0 < min_scale <= 1:
        raise ValueError(f"min_scale must lie in (0, 1], got {min_scale}")
    T = len(rec)
    keep = max(1, min(T, math.ceil(rng.uniform(min_scale, 1.0) * T)))
    start = int(rng.integers(0, T - keep + 1))
    return SequenceRecord(rec.frames[start:start + keep], rec.action_id, rec.source_id)


def subsequence(rec: SequenceRecord, indices) -> SequenceRecord:
    return SequenceRecord([rec.frames[int(i)] for i in indices], rec.action_id, rec.source_id)


def training_view(rec: SequenceRecord, rng: np.random.Generator, *, hflip_p: float = 0.5,
                  crop_p: float = 0.5, crop_mode: str = "spatial", min_scale: float = 0.7,
                  n: int = SEQ_LEN) -> SequenceRecord:
    """Augmented, randomly sampled ``n``-frame view of a training record.

    Sampling happens before the per-frame augmentations; a spatial crop and a
    flip act frame by frame, so this gives the same result as augmenting the
    whole record first while touching only ``n`` frames.
    """
    if crop_mode not in ("spatial", "temporal"):
        raise ValueError(f"unknown crop mode {crop_mode!r}")
    do_flip = rng.random() < hflip_p
    do_crop = rng.random() < crop_p
    if do_crop and crop_mode == "temporal":
        rec = temporal_crop(rec, rng, min_scale)
    rec = subsequence(rec, sample_indices(len(rec), n, "random", rng))
    if do_flip:
        rec = hflip(rec)
    if do_crop and crop_mode == "spatial":
        rec = random_crop(rec, rng, min_scale)
    return rec


def parse_mask_spec(spec: str) -> MaskConfig:
    """``+``-joined tokens from left, right, hands, bbox, label naming the parts kept.

    ``none`` masks every column.
    """
    if spec.strip() == "none":
        return MaskConfig(False, False, False, False)
    tokens = [t.strip() for t in spec.split("+")]
    allowed = {"left", "right", "hands", "bbox", "label"}
    bad = [t for t in tokens if t not in allowed]
    if bad or not spec.strip():
        raise UsageError(f"invalid mask spec {spec!r}; tokens must come from {sorted(allowed)}")
    toks = set(tokens)
    return MaskConfig(
        use_left="left" in toks or "hands" in toks,
        use_right="right" in toks or "hands" in toks,
        use_bbox="bbox" in toks,
        use_label="label" in toks,
    )

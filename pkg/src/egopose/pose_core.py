"""Hand/object/camera types and the pinhole projection into the image plane.

Hand joints are indexed 1..21 in documentation (index 1 is the wrist by
convention); arrays are 0-based. An absent hand is stored as 21 zero joints
with ``valid=False``.

2D pixel coordinates are snapped to a dyadic grid of 2**-32 px on
construction. At that resolution ``width - x`` is exact in binary64 for any
coordinate within 2**21 px of the image, which is what makes horizontal
flipping a bit-exact involution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidGeometryError, NonProjectablePointError

NUM_JOINTS = 21
GRID = 2.0**32


def snap(values) -> np.ndarray:
    """Round pixel coordinates to the 2**-32 grid (exact power-of-two scaling)."""
    arr = np.asarray(values, dtype=np.float64)
    return np.round(arr * GRID) / GRID


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidGeometryError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (self.width > 0 and self.height > 0):
            raise InvalidGeometryError(f"image size must be positive, got {self.width}x{self.height}")


@dataclass(frozen=True, eq=False)
class HandPose3D:
    joints: np.ndarray  # (21, 3) meters
    valid: bool = True

    def __post_init__(self):
        joints = np.asarray(self.joints, dtype=np.float64)
        if joints.shape != (NUM_JOINTS, 3):
            raise InvalidGeometryError(f"hand needs {NUM_JOINTS}x3 joints, got shape {joints.shape}")
        if not self.valid:
            joints = np.zeros_like(joints)
        object.__setattr__(self, "joints", _frozen(joints))
        object.__setattr__(self, "valid", bool(self.valid))

    def __eq__(self, other):
        if not isinstance(other, HandPose3D):
            return NotImplemented
        return self.valid == other.valid and np.array_equal(self.joints, other.joints)

    @classmethod
    def absent(cls) -> HandPose3D:
        return cls(np.zeros((NUM_JOINTS, 3)), valid=False)


@dataclass(frozen=True, eq=False)
class HandPose2D:
    joints: np.ndarray  # (21, 2) pixels
    valid: bool = True

    def __post_init__(self):
        joints = np.asarray(self.joints, dtype=np.float64)
        if joints.shape != (NUM_JOINTS, 2):
            raise InvalidGeometryError(f"hand needs {NUM_JOINTS}x2 joints, got shape {joints.shape}")
        if not self.valid:
            joints = np.zeros_like(joints)
        object.__setattr__(self, "joints", _frozen(snap(joints)))
        object.__setattr__(self, "valid", bool(self.valid))

    def __eq__(self, other):
        if not isinstance(other, HandPose2D):
            return NotImplemented
        return self.valid == other.valid and np.array_equal(self.joints, other.joints)

    @classmethod
    def absent(cls) -> HandPose2D:
        return cls(np.zeros((NUM_JOINTS, 2)), valid=False)


@dataclass(frozen=True, eq=False)
class ObjectPose3D:
    corners: np.ndarray  # (8, 3) meters
    label: int

    def __post_init__(self):
        corners = np.asarray(self.corners, dtype=np.float64)
        if corners.shape != (8, 3):
            raise InvalidGeometryError(f"object box needs 8x3 corners, got shape {corners.shape}")
        if int(self.label) < 0:
            raise InvalidGeometryError(f"object label must be >= 0, got {self.label}")
        object.__setattr__(self, "corners", _frozen(corners))
        object.__setattr__(self, "label", int(self.label))

    def __eq__(self, other):
        if not isinstance(other, ObjectPose3D):
            return NotImplemented
        return self.label == other.label and np.array_equal(self.corners, other.corners)


@dataclass(frozen=True, eq=False)
class ObjectPose2D:
    """Axis-aligned box, corners ordered TL, TR, BR, BL."""

    corners: np.ndarray  # (4, 2) pixels
    label: int

    def __post_init__(self):
        c = np.asarray(self.corners, dtype=np.float64)
        if c.shape != (4, 2):
            raise InvalidGeometryError(f"bbox needs 4x2 corners, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise InvalidGeometryError("bbox corners must be finite")
        c = snap(c)
        tl, tr, br, bl = c
        if not (tl[1] == tr[1] and tl[0] == bl[0] and br[0] == tr[0] and br[1] == bl[1]):
            raise InvalidGeometryError(f"bbox is not an axis-aligned rectangle: {c.tolist()}")
        if not (tl[0] <= tr[0] and tl[1] <= bl[1]):
            raise InvalidGeometryError(f"bbox corners not in TL, TR, BR, BL order: {c.tolist()}")
        if int(self.label) < 0:
            raise InvalidGeometryError(f"object label must be >= 0, got {self.label}")
        object.__setattr__(self, "corners", _frozen(c))
        object.__setattr__(self, "label", int(self.label))

    def __eq__(self, other):
        if not isinstance(other, ObjectPose2D):
            return NotImplemented
        return self.label == other.label and np.array_equal(self.corners, other.corners)

    @classmethod
    def from_extent(cls, x0: float, y0: float, x1: float, y1: float, label: int) -> ObjectPose2D:
        return cls(np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]]), label)

    @property
    def extent(self) -> tuple[float, float, float, float]:
        (x0, y0), _, (x1, y1), _ = self.corners
        return float(x0), float(y0), float(x1), float(y1)


@dataclass(frozen=True, eq=False)
class FramePose:
    left: HandPose2D
    right: HandPose2D
    object: ObjectPose2D
    width: int
    height: int

    def __eq__(self, other):
        if not isinstance(other, FramePose):
            return NotImplemented
        return (
            self.left == other.left
            and self.right == other.right
            and self.object == other.object
            and self.width == other.width
            and self.height == other.height
        )


def project_point(p, cam: CameraIntrinsics) -> tuple[float, float]:
    X, Y, Z = (float(v) for v in p)
    if not Z > 0:
        raise NonProjectablePointError(f"point ({X}, {Y}, {Z}) has Z <= 0")
    return cam.fx * X / Z + cam.cx, cam.fy * Y / Z + cam.cy


def project_hand(h: HandPose3D, cam: CameraIntrinsics) -> HandPose2D:
    if not h.valid:
        return HandPose2D.absent()
    out = np.empty((NUM_JOINTS, 2))
    for i, joint in enumerate(h.joints):
        try:
            out[i] = project_point(joint, cam)
        except NonProjectablePointError:
            raise NonProjectablePointError(f"hand joint {i + 1} has Z <= 0 (Z={joint[2]})") from None
    return HandPose2D(out, valid=True)


def bbox_from_corners(points, label: int) -> ObjectPose2D:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) == 0:
        raise InvalidGeometryError(f"expected (N, 2) points, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise InvalidGeometryError("bbox source points must be finite")
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    return ObjectPose2D.from_extent(x0, y0, x1, y1, label)


def project_object(obj: ObjectPose3D, cam: CameraIntrinsics) -> ObjectPose2D:
    pts = []
    for i, corner in enumerate(obj.corners):
        try:
            pts.append(project_point(corner, cam))
        except NonProjectablePointError:
            raise NonProjectablePointError(f"object corner {i + 1} has Z <= 0 (Z={corner[2]})") from None
    return bbox_from_corners(pts, obj.label)

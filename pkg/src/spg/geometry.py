"""Point-cloud and oriented-box primitives.

Everything downstream (voxel labels, regression targets, evaluation) rests on
one predicate: is a point inside an oriented box. Boxes are 7-DOF (center,
dimensions, yaw about z) and closed, i.e. boundary points count as inside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    wrapped = math.fmod(yaw + math.pi, 2.0 * math.pi)
    if wrapped < 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class Point:
    """A single point: xyz in meters plus F extra property channels."""

    x: float
    y: float
    z: float
    props: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        values = (self.x, self.y, self.z, *self.props)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"point has non-finite coordinates or props: {values}")

    @property
    def xyz(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


class PointCloud:
    """Dense point cloud: an (N, 3) xyz array plus an (N, F) property array.

    F is fixed per cloud; the cloud may be empty.
    """

    def __init__(self, xyz: np.ndarray, props: np.ndarray | None = None):
        xyz = np.asarray(xyz, dtype=np.float64)
        if xyz.size == 0:
            xyz = xyz.reshape(0, 3)
        if xyz.ndim != 2 or xyz.shape[1] != 3:
            raise ValueError(f"xyz must have shape (N, 3), got {xyz.shape}")
        if props is None:
            props = np.zeros((len(xyz), 0), dtype=np.float64)
        props = np.asarray(props, dtype=np.float64)
        if props.ndim == 1 and len(xyz) == 0:
            props = props.reshape(0, 0)
        if props.ndim != 2 or props.shape[0] != xyz.shape[0]:
            raise ValueError(
                f"props must have shape (N, F) with N={len(xyz)}, got {props.shape}"
            )
        if not (np.isfinite(xyz).all() and np.isfinite(props).all()):
            raise ValueError("point cloud contains non-finite values")
        self.xyz = xyz
        self.props = props

    @property
    def prop_count(self) -> int:
        return self.props.shape[1]

    def __len__(self) -> int:
        return self.xyz.shape[0]

    def point(self, i: int) -> Point:
        return Point(*self.xyz[i], props=tuple(self.props[i]))

    def select(self, mask_or_indices: np.ndarray) -> "PointCloud":
        """New cloud keeping the given rows (boolean mask or index array)."""
        return PointCloud(self.xyz[mask_or_indices], self.props[mask_or_indices])

    @classmethod
    def empty(cls, prop_count: int = 0) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, prop_count)))

    @classmethod
    def from_points(cls, points: Sequence[Point]) -> "PointCloud":
        if not points:
            return cls.empty()
        prop_counts = {len(p.props) for p in points}
        if len(prop_counts) != 1:
            raise ValueError(f"inconsistent prop counts: {sorted(prop_counts)}")
        xyz = np.array([[p.x, p.y, p.z] for p in points], dtype=np.float64)
        props = np.array([p.props for p in points], dtype=np.float64).reshape(
            len(points), -1
        )
        return cls(xyz, props)


@dataclass(frozen=True)
class OrientedBox:
    """7-DOF box: center, dimensions (length along local x), yaw about z."""

    cx: float
    cy: float
    cz: float
    length: float
    width: float
    height: float
    yaw: float
    class_id: int = 0

    def __post_init__(self) -> None:
        for name in ("length", "width", "height"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"box {name} must be strictly positive")
        values = (self.cx, self.cy, self.cz, self.length, self.width, self.height, self.yaw)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"box has non-finite parameters: {values}")
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz], dtype=np.float64)

    @property
    def half_dims(self) -> np.ndarray:
        return np.array([self.length, self.width, self.height], dtype=np.float64) / 2.0


@dataclass
class Scene:
    """One LiDAR-style frame: a cloud, its ground-truth boxes, free-form tags."""

    cloud: PointCloud
    boxes: Sequence[OrientedBox] = field(default_factory=tuple)
    meta: Mapping[str, str] = field(default_factory=dict)


def points_in_box(xyz: np.ndarray, box: OrientedBox) -> np.ndarray:
    """Boolean mask over (N, 3) points; closed box (boundary is inside).

    Each point is moved into the box frame (translate by -center, rotate by
    -yaw about z) and compared against the axis-aligned half-dimensions.
    """
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    shifted = xyz - box.center
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    # Rotation by -yaw about z.
    local_x = c * shifted[:, 0] + s * shifted[:, 1]
    local_y = -s * shifted[:, 0] + c * shifted[:, 1]
    local_z = shifted[:, 2]
    half = box.half_dims
    return (
        (np.abs(local_x) <= half[0])
        & (np.abs(local_y) <= half[1])
        & (np.abs(local_z) <= half[2])
    )


def point_in_box(p: Point | np.ndarray | Sequence[float], box: OrientedBox) -> bool:
    """True iff the point lies inside (or on the boundary of) the box."""
    xyz = p.xyz if isinstance(p, Point) else np.asarray(p, dtype=np.float64)
    return bool(points_in_box(xyz.reshape(1, 3), box)[0])


def points_in_any_box(xyz: np.ndarray, boxes: Sequence[OrientedBox]) -> np.ndarray:
    """Boolean mask over points: inside at least one of the boxes."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    mask = np.zeros(len(xyz), dtype=bool)
    for box in boxes:
        mask |= points_in_box(xyz, box)
    return mask


def foreground_mask(cloud: PointCloud, boxes: Sequence[OrientedBox]) -> np.ndarray:
    """Per-point foreground flags: true iff the point is inside any box."""
    return points_in_any_box(cloud.xyz, boxes)

"""Synthetic scene generation and weather-style degradation.

Scenes mimic LiDAR frames in miniature: a handful of non-overlapping boxes
with points scattered just inside their faces, plus uniform background
clutter. Degradation profiles remove points — uniformly, or in contiguous
BEV patches around a virtual sensor at the origin, which reproduces the
irregular missing-region structure of rain-degraded scans.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .generation import rnd_drop
from .geometry import OrientedBox, PointCloud, Scene

Range = Tuple[float, float]


class PlacementError(RuntimeError):
    """Box placement failed after the retry budget."""


@dataclass(frozen=True)
class SceneRecipe:
    n_objects: Tuple[int, int] = (1, 4)
    length_range: Range = (2.5, 5.0)
    width_range: Range = (1.4, 2.2)
    height_range: Range = (1.2, 2.0)
    surface_density: float = 12.0  # points per square meter of box surface
    clutter_density: float = 0.4  # points per square meter of ground extent
    extent: Tuple[Range, Range, Range] = ((-12.0, 12.0), (-12.0, 12.0), (-1.0, 2.2))
    prop_count: int = 1
    seed: int = 0
    max_retries: int = 200

    def __post_init__(self) -> None:
        if self.n_objects[0] < 0 or self.n_objects[1] < self.n_objects[0]:
            raise ValueError(f"invalid n_objects range {self.n_objects}")
        for name in ("length_range", "width_range", "height_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"invalid {name} {(lo, hi)}")
        for lo, hi in self.extent:
            if not lo < hi:
                raise ValueError(f"degenerate extent axis {(lo, hi)}")
        if self.surface_density <= 0 or self.clutter_density < 0:
            raise ValueError("densities must be positive (surface) / non-negative (clutter)")


@dataclass(frozen=True)
class DegradationProfile:
    mode: str = "none"  # "none" | "uniform" | "patchy"
    rate: float = 0.17  # uniform mode
    patch_count: int = 8  # patchy mode
    patch_radius: float = 2.5
    keep_prob: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("none", "uniform", "patchy"):
            raise ValueError(f"unknown degradation mode {self.mode!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"rate must be in [0, 1], got {self.rate}")
        if not 0.0 <= self.keep_prob <= 1.0:
            raise ValueError(f"keep_prob must be in [0, 1], got {self.keep_prob}")
        if self.patch_count < 0 or self.patch_radius < 0:
            raise ValueError("patch_count and patch_radius must be non-negative")


def _sample_boxes(recipe: SceneRecipe, rng: np.random.Generator) -> list[OrientedBox]:
    n = int(rng.integers(recipe.n_objects[0], recipe.n_objects[1] + 1))
    (x_lo, x_hi), (y_lo, y_hi), (z_lo, z_hi) = recipe.extent
    boxes: list[OrientedBox] = []
    for _ in range(n):
        for attempt in range(recipe.max_retries + 1):
            if attempt == recipe.max_retries:
                raise PlacementError(
                    f"could not place box {len(boxes) + 1}/{n} after "
                    f"{recipe.max_retries} retries (seed {recipe.seed})"
                )
            length = rng.uniform(*recipe.length_range)
            width = rng.uniform(*recipe.width_range)
            height = rng.uniform(*recipe.height_range)
            radius = math.hypot(length, width) / 2.0
            cx = rng.uniform(x_lo + radius, x_hi - radius)
            cy = rng.uniform(y_lo + radius, y_hi - radius)
            cz = rng.uniform(z_lo + height / 2.0, z_hi - height / 2.0)
            yaw = rng.uniform(-math.pi, math.pi)
            # Disjoint BEV circumscribed circles guarantee no box overlap.
            clear = all(
                math.hypot(cx - b.cx, cy - b.cy)
                > radius + math.hypot(b.length, b.width) / 2.0
                for b in boxes
            )
            if clear:
                boxes.append(OrientedBox(cx, cy, cz, length, width, height, yaw))
                break
    return boxes


def _sample_box_surface(
    box: OrientedBox, count: int, rng: np.random.Generator
) -> np.ndarray:
    """Points just inside the box faces (small inward offset, LiDAR-ish)."""
    half = box.half_dims
    areas = np.array(
        [
            box.width * box.height,  # +-x faces
            box.width * box.height,
            box.length * box.height,  # +-y faces
            box.length * box.height,
            box.length * box.width,  # +-z faces
            box.length * box.width,
        ]
    )
    faces = rng.choice(6, size=count, p=areas / areas.sum())
    u = rng.uniform(-1.0, 1.0, size=count)
    v = rng.uniform(-1.0, 1.0, size=count)
    inset = rng.uniform(0.005, 0.03, size=count)
    local = np.empty((count, 3))
    for axis in range(3):
        on_face = faces // 2 == axis
        sign = np.where(faces[on_face] % 2 == 0, 1.0, -1.0)
        depth = sign * (half[axis] - inset[on_face])
        others = [a for a in range(3) if a != axis]
        local[on_face, axis] = depth
        local[on_face, others[0]] = u[on_face] * half[others[0]]
        local[on_face, others[1]] = v[on_face] * half[others[1]]
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    world_x = c * local[:, 0] - s * local[:, 1] + box.cx
    world_y = s * local[:, 0] + c * local[:, 1] + box.cy
    world_z = local[:, 2] + box.cz
    return np.stack([world_x, world_y, world_z], axis=1)


def make_scene(recipe: SceneRecipe) -> Scene:
    """Generate one scene; the same recipe (and seed) is bit-reproducible.

    Coordinates and properties are rounded through float32 so scenes survive
    the binary cloud format without loss.
    """
    rng = np.random.Generator(np.random.PCG64(recipe.seed))
    boxes = _sample_boxes(recipe, rng)
    chunks = []
    for box in boxes:
        surface = 2.0 * (
            box.length * box.width + box.width * box.height + box.length * box.height
        )
        count = max(1, int(round(recipe.surface_density * surface)))
        chunks.append(_sample_box_surface(box, count, rng))
    (x_lo, x_hi), (y_lo, y_hi), (z_lo, z_hi) = recipe.extent
    clutter_count = int(round(recipe.clutter_density * (x_hi - x_lo) * (y_hi - y_lo)))
    if clutter_count:
        clutter = np.stack(
            [
                rng.uniform(x_lo, x_hi, size=clutter_count),
                rng.uniform(y_lo, y_hi, size=clutter_count),
                rng.uniform(z_lo, z_hi, size=clutter_count),
            ],
            axis=1,
        )
        chunks.append(clutter)
    xyz = np.concatenate(chunks, axis=0) if chunks else np.zeros((0, 3))
    props = rng.uniform(0.0, 1.0, size=(len(xyz), recipe.prop_count))
    xyz = xyz.astype(np.float32).astype(np.float64)
    props = props.astype(np.float32).astype(np.float64)
    return Scene(cloud=PointCloud(xyz, props), boxes=tuple(boxes), meta={})


def degrade(scene: Scene, profile: DegradationProfile) -> Scene:
    """Remove points per the profile; boxes and labels stay untouched."""
    if profile.mode == "none":
        return Scene(cloud=scene.cloud, boxes=scene.boxes, meta=dict(scene.meta))
    if profile.mode == "uniform":
        cloud = rnd_drop(scene.cloud, profile.rate, profile.seed)
        return Scene(cloud=cloud, boxes=scene.boxes, meta=dict(scene.meta))

    rng = np.random.Generator(np.random.PCG64(profile.seed))
    xy = scene.cloud.xyz[:, :2]
    if len(scene.cloud) == 0 or profile.patch_count == 0:
        return Scene(cloud=scene.cloud, boxes=scene.boxes, meta=dict(scene.meta))
    # Patch centers drawn in polar coordinates around the sensor at origin.
    max_range = float(np.hypot(xy[:, 0], xy[:, 1]).max())
    angles = rng.uniform(-math.pi, math.pi, size=profile.patch_count)
    ranges = rng.uniform(0.0, max_range, size=profile.patch_count)
    centers = np.stack([ranges * np.cos(angles), ranges * np.sin(angles)], axis=1)
    in_patch = np.zeros(len(scene.cloud), dtype=bool)
    for center in centers:
        in_patch |= np.hypot(xy[:, 0] - center[0], xy[:, 1] - center[1]) <= profile.patch_radius
    keep = ~in_patch | (rng.random(len(scene.cloud)) < profile.keep_prob)
    return Scene(cloud=scene.cloud.select(keep), boxes=scene.boxes, meta=dict(scene.meta))

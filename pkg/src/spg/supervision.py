"""Compile scenes into per-voxel training targets.

A voxel in the generation area gets:
  * a foreground label (1 iff the voxel center lies in a box, or the voxel
    holds at least one foreground point),
  * one of four categories (occupied/empty x foreground/background),
  * an orthogonal hidden flag for voxels whose points were removed by
    hide-and-predict,
  * a regression target (centroid + mean properties of its foreground
    points), valid only where such points exist pre-hiding.

Labels and targets always derive from pre-hiding geometry; hiding only
removes points from the cloud the network will observe.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Tuple

import numpy as np

from .geometry import PointCloud, Scene, foreground_mask, points_in_any_box
from .voxelgrid import OUT_OF_GRID, GenerationArea, GridSpec, VoxelGrid, generation_area, voxelize


class VoxelCategory(IntEnum):
    OCCUPIED_FOREGROUND = 0
    OCCUPIED_BACKGROUND = 1
    EMPTY_FOREGROUND = 2
    EMPTY_BACKGROUND = 3


@dataclass(frozen=True)
class HideConfig:
    """Fraction of occupied voxels to hide, and the seed that selects them."""

    gamma_percent: float = 25.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma_percent <= 100.0:
            raise ValueError(f"gamma_percent must be in [0, 100], got {self.gamma_percent}")


@dataclass
class RegressionTargets:
    """Per-voxel centroid and mean properties of foreground points."""

    valid: np.ndarray  # (M,) bool
    centroid: np.ndarray  # (M, 3)
    mean_props: np.ndarray  # (M, F)


@dataclass
class HideResult:
    """Outcome of hide-and-predict on one scene."""

    hidden_voxels: np.ndarray  # sorted linear indices
    post_hide_cloud: PointCloud
    kept_points: np.ndarray  # indices into the original cloud
    # Pre-hiding supervision for the hidden voxels, aligned to hidden_voxels.
    label: np.ndarray
    category: np.ndarray
    targets: RegressionTargets


@dataclass
class SupervisionTargets:
    """Per-voxel targets over the generation area, plus the observed cloud."""

    spec: GridSpec
    grid: VoxelGrid  # pre-hiding
    area: GenerationArea
    voxels: np.ndarray  # == area.indices
    label: np.ndarray  # (M,) uint8
    category: np.ndarray  # (M,) uint8, VoxelCategory values
    hidden: np.ndarray  # (M,) bool
    targets: RegressionTargets
    hidden_voxels: np.ndarray  # sorted linear indices
    post_hide_cloud: PointCloud

    def __post_init__(self) -> None:
        fg = (self.category == VoxelCategory.OCCUPIED_FOREGROUND) | (
            self.category == VoxelCategory.EMPTY_FOREGROUND
        )
        if not np.array_equal(fg, self.label.astype(bool)):
            raise AssertionError("label/category mismatch")


def _require_aligned(scene: Scene, grid: VoxelGrid) -> None:
    if len(scene.cloud) != len(grid.point_to_voxel):
        raise ValueError(
            f"grid built from {len(grid.point_to_voxel)} points but scene has {len(scene.cloud)}"
        )


def _labels_for_voxels(
    scene: Scene, grid: VoxelGrid, voxels: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """(label, category) for an arbitrary sorted array of voxel indices."""
    voxels = np.asarray(voxels, dtype=np.int64)
    fg_points = foreground_mask(scene.cloud, scene.boxes)
    in_grid = grid.point_to_voxel != OUT_OF_GRID
    fg_voxels = np.unique(grid.point_to_voxel[fg_points & in_grid])

    occupied = np.isin(voxels, grid.occupied, assume_unique=False)
    has_fg_point = np.isin(voxels, fg_voxels, assume_unique=False)
    center_in_box = points_in_any_box(grid.spec.voxel_center(voxels), scene.boxes)

    label = np.where(
        occupied & (has_fg_point | center_in_box) | (~occupied & center_in_box), 1, 0
    ).astype(np.uint8)

    category = np.empty(len(voxels), dtype=np.uint8)
    category[occupied & (label == 1)] = VoxelCategory.OCCUPIED_FOREGROUND
    category[occupied & (label == 0)] = VoxelCategory.OCCUPIED_BACKGROUND
    category[~occupied & (label == 1)] = VoxelCategory.EMPTY_FOREGROUND
    category[~occupied & (label == 0)] = VoxelCategory.EMPTY_BACKGROUND
    return label, category


def label_voxels(
    scene: Scene, grid: VoxelGrid, area: GenerationArea
) -> Tuple[np.ndarray, np.ndarray]:
    """Foreground label and category for every generation-area voxel."""
    _require_aligned(scene, grid)
    return _labels_for_voxels(scene, grid, area.indices)


def _targets_for_voxels(
    scene: Scene, grid: VoxelGrid, voxels: np.ndarray
) -> RegressionTargets:
    voxels = np.asarray(voxels, dtype=np.int64)
    prop_count = scene.cloud.prop_count
    fg_points = foreground_mask(scene.cloud, scene.boxes)
    usable = fg_points & (grid.point_to_voxel != OUT_OF_GRID)

    point_voxels = grid.point_to_voxel[usable]
    counts = np.zeros(len(voxels), dtype=np.int64)
    centroid_sum = np.zeros((len(voxels), 3), dtype=np.float64)
    props_sum = np.zeros((len(voxels), prop_count), dtype=np.float64)
    if len(voxels) and len(point_voxels):
        positions = np.searchsorted(voxels, point_voxels)
        # Drop foreground points whose voxel is not in the requested set.
        clipped = np.minimum(positions, len(voxels) - 1)
        inside = voxels[clipped] == point_voxels
        pos = clipped[inside]
        np.add.at(counts, pos, 1)
        np.add.at(centroid_sum, pos, scene.cloud.xyz[usable][inside])
        np.add.at(props_sum, pos, scene.cloud.props[usable][inside])

    valid = counts > 0
    centroid = np.zeros((len(voxels), 3), dtype=np.float64)
    mean_props = np.zeros((len(voxels), prop_count), dtype=np.float64)
    centroid[valid] = centroid_sum[valid] / counts[valid, None]
    mean_props[valid] = props_sum[valid] / counts[valid, None]
    return RegressionTargets(valid=valid, centroid=centroid, mean_props=mean_props)


def regression_targets(
    scene: Scene, grid: VoxelGrid, area: GenerationArea
) -> RegressionTargets:
    """Centroid/mean-property targets for area voxels with foreground points."""
    _require_aligned(scene, grid)
    return _targets_for_voxels(scene, grid, area.indices)


def hidden_voxel_count(gamma_percent: float, occupied_count: int) -> int:
    """round-half-up of gamma% of the occupied voxel count."""
    return int(np.floor(gamma_percent / 100.0 * occupied_count + 0.5))


def hide_and_predict(scene: Scene, grid: VoxelGrid, cfg: HideConfig) -> HideResult:
    """Hide all points of a random gamma% of occupied voxels.

    The selection is drawn uniformly without replacement from the sorted
    occupied list with ``numpy.random.Generator(PCG64(rng_seed))``, so a seed
    fully determines the hidden set. Labels and regression targets for the
    hidden voxels are computed from the pre-hiding points.
    """
    _require_aligned(scene, grid)
    n_hide = hidden_voxel_count(cfg.gamma_percent, len(grid.occupied))
    if n_hide:
        rng = np.random.Generator(np.random.PCG64(cfg.rng_seed))
        hidden = np.sort(rng.choice(grid.occupied, size=n_hide, replace=False))
    else:
        hidden = np.zeros(0, dtype=np.int64)

    keep = ~np.isin(grid.point_to_voxel, hidden)
    kept_points = np.flatnonzero(keep)
    label, category = _labels_for_voxels(scene, grid, hidden)
    targets = _targets_for_voxels(scene, grid, hidden)
    return HideResult(
        hidden_voxels=hidden,
        post_hide_cloud=scene.cloud.select(kept_points),
        kept_points=kept_points,
        label=label,
        category=category,
        targets=targets,
    )


def build_targets(
    scene: Scene,
    spec: GridSpec,
    area_radius: int,
    hide_cfg: HideConfig,
    expansion_enabled: bool = True,
    area_mode: str = "3d",
) -> SupervisionTargets:
    """Full target pipeline: voxelize, hide, expand, label, regress.

    The generation area is computed from pre-hiding occupancy so hidden
    regions remain supervised. With expansion disabled the area collapses to
    the occupied voxels and empty voxels receive no supervision at all.
    """
    grid = voxelize(scene.cloud, spec)
    hide = hide_and_predict(scene, grid, hide_cfg)
    radius = area_radius if expansion_enabled else 0
    area = generation_area(grid, radius, mode=area_mode)
    label, category = _labels_for_voxels(scene, grid, area.indices)
    targets = _targets_for_voxels(scene, grid, area.indices)
    hidden_flags = np.isin(area.indices, hide.hidden_voxels, assume_unique=True)
    return SupervisionTargets(
        spec=spec,
        grid=grid,
        area=area,
        voxels=area.indices,
        label=label,
        category=category,
        hidden=hidden_flags,
        targets=targets,
        hidden_voxels=hide.hidden_voxels,
        post_hide_cloud=hide.post_hide_cloud,
    )

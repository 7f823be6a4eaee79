"""Regular-grid voxelization, occupancy, pillars, and generation areas.

Voxel cells are half-open per axis: [min, min + size). A point exactly on the
max grid boundary is out of grid. Linear voxel index convention is
``x + nx * (y + ny * z)``, i.e. the C-order ravel of a dense ``(nz, ny, nx)``
array indexed ``[z, y, x]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from .geometry import PointCloud

OUT_OF_GRID = -1


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a regular voxel grid: origin corner, cell size, cell counts."""

    origin: Tuple[float, float, float]
    voxel_size: Tuple[float, float, float]
    dims: Tuple[int, int, int]  # (nx, ny, nz)

    def __post_init__(self) -> None:
        if len(self.origin) != 3 or len(self.voxel_size) != 3 or len(self.dims) != 3:
            raise ValueError("origin, voxel_size and dims must each have 3 entries")
        if any(s <= 0 for s in self.voxel_size):
            raise ValueError(f"voxel_size must be strictly positive, got {self.voxel_size}")
        if any(int(n) <= 0 or int(n) != n for n in self.dims):
            raise ValueError(f"dims must be positive integers, got {self.dims}")
        if self.dims[0] * self.dims[1] * self.dims[2] >= np.iinfo(np.int64).max:
            raise ValueError("grid too large for int64 voxel indices")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "voxel_size", tuple(float(v) for v in self.voxel_size))
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))

    @property
    def num_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def linear_index(self, coords: np.ndarray) -> np.ndarray:
        """(M, 3) integer xyz voxel coordinates -> (M,) linear indices."""
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        nx, ny, _ = self.dims
        return coords[:, 0] + nx * (coords[:, 1] + ny * coords[:, 2])

    def voxel_coords(self, linear: np.ndarray) -> np.ndarray:
        """(M,) linear indices -> (M, 3) integer xyz voxel coordinates."""
        linear = np.asarray(linear, dtype=np.int64).reshape(-1)
        nx, ny, _ = self.dims
        x = linear % nx
        y = (linear // nx) % ny
        z = linear // (nx * ny)
        return np.stack([x, y, z], axis=1)

    def voxel_min(self, linear: np.ndarray) -> np.ndarray:
        """Min corner of each voxel, shape (M, 3)."""
        coords = self.voxel_coords(linear).astype(np.float64)
        return np.asarray(self.origin) + coords * np.asarray(self.voxel_size)

    def voxel_center(self, linear: np.ndarray) -> np.ndarray:
        return self.voxel_min(linear) + 0.5 * np.asarray(self.voxel_size)


class VoxelGrid:
    """A point cloud bucketed into a regular grid.

    Attributes:
        spec: the grid geometry.
        point_to_voxel: (N,) linear voxel index per point, OUT_OF_GRID for
            points outside the grid on any axis.
        occupied: sorted array of linear indices of non-empty voxels.
        voxel_points: voxel linear index -> array of point indices (ascending).
    """

    def __init__(self, spec: GridSpec, point_to_voxel: np.ndarray):
        self.spec = spec
        self.point_to_voxel = np.asarray(point_to_voxel, dtype=np.int64)
        in_grid = self.point_to_voxel != OUT_OF_GRID
        self.occupied = np.unique(self.point_to_voxel[in_grid])
        order = np.argsort(self.point_to_voxel[in_grid], kind="stable")
        in_grid_points = np.flatnonzero(in_grid)[order]
        sorted_voxels = self.point_to_voxel[in_grid_points]
        boundaries = np.searchsorted(sorted_voxels, self.occupied)
        boundaries = np.append(boundaries, len(sorted_voxels))
        self.voxel_points: Dict[int, np.ndarray] = {
            int(v): in_grid_points[boundaries[i] : boundaries[i + 1]]
            for i, v in enumerate(self.occupied)
        }

    @property
    def num_out_of_grid(self) -> int:
        return int(np.sum(self.point_to_voxel == OUT_OF_GRID))

    def occupancy_dense(self) -> np.ndarray:
        """Dense boolean occupancy, shape (nz, ny, nx)."""
        nx, ny, nz = self.spec.dims
        dense = np.zeros(nx * ny * nz, dtype=bool)
        dense[self.occupied] = True
        return dense.reshape(nz, ny, nx)


@dataclass(frozen=True)
class GenerationArea:
    """The voxel set eligible for point generation.

    With radius 0 the area is exactly the occupied set; a positive radius
    dilates it by that many voxel steps (Chebyshev metric, 3D by default,
    BEV-only in "2d" mode).
    """

    indices: np.ndarray  # sorted linear voxel indices
    radius: int
    mode: str = "3d"

    def dense(self, spec: GridSpec) -> np.ndarray:
        nx, ny, nz = spec.dims
        dense = np.zeros(nx * ny * nz, dtype=bool)
        dense[self.indices] = True
        return dense.reshape(nz, ny, nx)

    def __len__(self) -> int:
        return len(self.indices)

    def __contains__(self, voxel: int) -> bool:
        i = np.searchsorted(self.indices, voxel)
        return i < len(self.indices) and self.indices[i] == voxel


def voxelize(cloud: PointCloud, spec: GridSpec) -> VoxelGrid:
    """Assign each point to its voxel by floored division from the origin."""
    origin = np.asarray(spec.origin)
    size = np.asarray(spec.voxel_size)
    dims = np.asarray(spec.dims, dtype=np.int64)
    coords = np.floor((cloud.xyz - origin) / size).astype(np.int64)
    in_grid = np.all((coords >= 0) & (coords < dims), axis=1)
    linear = np.full(len(cloud), OUT_OF_GRID, dtype=np.int64)
    if len(cloud):
        linear[in_grid] = spec.linear_index(coords[in_grid])
    return VoxelGrid(spec, linear)


def _dilate_axis(mask: np.ndarray, axis: int, steps: int) -> np.ndarray:
    """Binary dilation by an interval of +-steps along one axis."""
    out = mask.copy()
    for _ in range(steps):
        grown = out.copy()
        fwd = np.roll(out, 1, axis=axis)
        bwd = np.roll(out, -1, axis=axis)
        # roll wraps around; clear the wrapped slice
        index_lo = [slice(None)] * out.ndim
        index_lo[axis] = 0
        index_hi = [slice(None)] * out.ndim
        index_hi[axis] = out.shape[axis] - 1
        fwd[tuple(index_lo)] = False
        bwd[tuple(index_hi)] = False
        grown |= fwd | bwd
        out = grown
    return out


def generation_area(grid: VoxelGrid, radius: int, mode: str = "3d") -> GenerationArea:
    """Occupied voxels dilated by `radius` Chebyshev steps, clipped to the grid.

    A cubic Chebyshev ball factors into per-axis interval dilations, so the
    dilation is applied separably along z, y, x ("3d") or y, x only ("2d").
    """
    if radius < 0:
        raise ValueError(f"radius must be non-negative, got {radius}")
    if mode not in ("3d", "2d"):
        raise ValueError(f"mode must be '3d' or '2d', got {mode!r}")
    dense = grid.occupancy_dense()
    if radius > 0:
        axes = (0, 1, 2) if mode == "3d" else (1, 2)
        for axis in axes:
            dense = _dilate_axis(dense, axis, radius)
    indices = np.flatnonzero(dense.reshape(-1)).astype(np.int64)
    return GenerationArea(indices=indices, radius=radius, mode=mode)


def pillar_index(grid: VoxelGrid) -> Dict[Tuple[int, int], List[int]]:
    """Map each BEV pillar (x, y) to its z-ascending list of voxel indices."""
    nx, ny, nz = grid.spec.dims
    pillars: Dict[Tuple[int, int], List[int]] = {}
    for y in range(ny):
        for x in range(nx):
            base = x + nx * y
            pillars[(x, y)] = [base + nx * ny * z for z in range(nz)]
    return pillars

"""Shared fixtures and random-input builders."""

from __future__ import annotations

import math

import numpy as np
import pytest

from spg.geometry import OrientedBox, PointCloud, Scene
from spg.voxelgrid import GridSpec


def random_box(rng: np.random.Generator, extent: float = 8.0) -> OrientedBox:
    return OrientedBox(
        cx=rng.uniform(-extent, extent),
        cy=rng.uniform(-extent, extent),
        cz=rng.uniform(-1.0, 1.0),
        length=rng.uniform(0.5, 5.0),
        width=rng.uniform(0.5, 3.0),
        height=rng.uniform(0.5, 2.5),
        yaw=rng.uniform(-math.pi, math.pi),
        class_id=int(rng.integers(0, 3)),
    )


def random_cloud(rng: np.random.Generator, n: int, prop_count: int = 1, extent: float = 9.0) -> PointCloud:
    xyz = rng.uniform(-extent, extent, size=(n, 3))
    xyz[:, 2] = rng.uniform(-1.5, 2.0, size=n)
    props = rng.uniform(0.0, 1.0, size=(n, prop_count))
    return PointCloud(xyz, props)


def random_scene(rng: np.random.Generator, n_points: int | None = None, n_boxes: int | None = None) -> Scene:
    n_points = int(rng.integers(0, 400)) if n_points is None else n_points
    n_boxes = int(rng.integers(0, 5)) if n_boxes is None else n_boxes
    return Scene(
        cloud=random_cloud(rng, n_points),
        boxes=tuple(random_box(rng) for _ in range(n_boxes)),
    )


def random_grid(rng: np.random.Generator, max_dim: int = 16) -> GridSpec:
    dims = tuple(int(d) for d in rng.integers(2, max_dim + 1, size=3))
    size = tuple(float(s) for s in rng.uniform(0.4, 2.0, size=3))
    origin = tuple(float(o) for o in rng.uniform(-10.0, -5.0, size=3))
    return GridSpec(origin=origin, voxel_size=size, dims=dims)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def small_grid() -> GridSpec:
    return GridSpec(origin=(-8.0, -8.0, -2.0), voxel_size=(1.0, 1.0, 1.0), dims=(16, 16, 4))

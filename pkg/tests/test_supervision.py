"""Supervision target compilation vs. the slow reference pipeline."""

import numpy as np
import pytest

from spg.geometry import OrientedBox, PointCloud, Scene
from spg.supervision import (
    HideConfig,
    VoxelCategory,
    build_targets,
    hidden_voxel_count,
    hide_and_predict,
    label_voxels,
    regression_targets,
)
from spg.voxelgrid import GridSpec, generation_area, voxelize

from conftest import random_scene
from oracles import reference_build_targets

SPEC = GridSpec(origin=(-8.0, -8.0, -2.0), voxel_size=(1.0, 1.0, 1.0), dims=(16, 16, 4))


def scene_with(points, boxes, prop_count=1):
    xyz = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    props = np.arange(len(xyz) * prop_count, dtype=np.float64).reshape(len(xyz), prop_count)
    return Scene(cloud=PointCloud(xyz, props), boxes=tuple(boxes))


def test_empty_scene_has_empty_area():
    scene = scene_with([], [])
    grid = voxelize(scene.cloud, SPEC)
    area = generation_area(grid, 3)
    label, category = label_voxels(scene, grid, area)
    assert len(label) == 0 and len(category) == 0


def test_single_box_covering_single_voxel():
    # voxel (8, 8, 2) spans [0,1)^3; box covers exactly that cube
    box = OrientedBox(0.5, 0.5, 0.5, 1.0, 1.0, 1.0, 0.0)
    scene = scene_with([[0.5, 0.5, 0.5]], [box])
    grid = voxelize(scene.cloud, SPEC)
    area = generation_area(grid, 0)
    label, category = label_voxels(scene, grid, area)
    assert label.tolist() == [1]
    assert category.tolist() == [VoxelCategory.OCCUPIED_FOREGROUND]


def test_label_rejects_mismatched_grid():
    scene = scene_with([[0.5, 0.5, 0.5]], [])
    other = scene_with([[0.5, 0.5, 0.5], [1.5, 0.5, 0.5]], [])
    grid = voxelize(other.cloud, SPEC)
    with pytest.raises(ValueError):
        label_voxels(scene, grid, generation_area(grid, 0))


def test_occupied_background_with_center_in_box_is_foreground():
    # box covers the voxel but the only point inside the voxel is background
    box = OrientedBox(0.5, 0.5, 0.5, 1.0, 1.0, 1.0, 0.0)
    far_box = OrientedBox(5.5, 5.5, 0.5, 0.2, 0.2, 0.2, 0.0)
    scene = scene_with([[0.9, 0.9, 0.9]], [far_box])
    # the point is background; now label with the covering box present
    scene = Scene(cloud=scene.cloud, boxes=(box,))
    grid = voxelize(scene.cloud, SPEC)
    area = generation_area(grid, 0)
    # shrink the box so the point is outside it but the center is inside
    small = OrientedBox(0.35, 0.35, 0.35, 0.7, 0.7, 0.7, 0.0)
    label, category = label_voxels(Scene(cloud=scene.cloud, boxes=(small,)), grid, area)
    assert label.tolist() == [1]
    assert category.tolist() == [VoxelCategory.OCCUPIED_FOREGROUND]
    targets = regression_targets(Scene(cloud=scene.cloud, boxes=(small,)), grid, area)
    assert not targets.valid[0]  # no foreground point -> no feature target


def test_regression_single_point():
    box = OrientedBox(0.5, 0.5, 0.5, 1.0, 1.0, 1.0, 0.0)
    scene = scene_with([[0.25, 0.5, 0.75]], [box])
    grid = voxelize(scene.cloud, SPEC)
    targets = regression_targets(scene, grid, generation_area(grid, 0))
    assert targets.valid.tolist() == [True]
    assert np.allclose(targets.centroid[0], [0.25, 0.5, 0.75])
    assert np.allclose(targets.mean_props[0], [0.0])


def test_regression_mean_of_two_points():
    box = OrientedBox(0.5, 0.5, 0.5, 1.0, 1.0, 1.0, 0.0)
    scene = Scene(
        cloud=PointCloud(
            np.array([[0.0, 0.0, 0.0], [0.5, 0.5, 0.5]]), np.array([[1.0], [3.0]])
        ),
        boxes=(box,),
    )
    grid = voxelize(scene.cloud, SPEC)
    targets = regression_targets(scene, grid, generation_area(grid, 0))
    assert np.allclose(targets.centroid[0], [0.25, 0.25, 0.25])
    assert np.allclose(targets.mean_props[0], [2.0])


def test_regression_ignores_background_points(rng):
    # 2 foreground + 3 background points in one voxel
    box = OrientedBox(0.25, 0.25, 0.25, 0.5, 0.5, 0.5, 0.0)
    fg = rng.uniform(0.05, 0.45, size=(2, 3))
    bg = rng.uniform(0.55, 0.95, size=(3, 3))
    xyz = np.concatenate([fg, bg])
    props = rng.uniform(size=(5, 2))
    scene = Scene(cloud=PointCloud(xyz, props), boxes=(box,))
    grid = voxelize(scene.cloud, SPEC)
    targets = regression_targets(scene, grid, generation_area(grid, 0))
    v = int(np.searchsorted(grid.occupied, grid.point_to_voxel[0]))
    assert targets.valid[v]
    assert np.allclose(targets.centroid[v], fg.mean(axis=0))
    assert np.allclose(targets.mean_props[v], props[:2].mean(axis=0))


def test_hide_gamma_zero_is_identity(rng):
    scene = random_scene(rng, n_points=200, n_boxes=2)
    grid = voxelize(scene.cloud, SPEC)
    result = hide_and_predict(scene, grid, HideConfig(0.0, 7))
    assert len(result.hidden_voxels) == 0
    assert np.array_equal(result.post_hide_cloud.xyz, scene.cloud.xyz)


def test_hide_gamma_hundred_keeps_only_out_of_grid(rng):
    in_grid = rng.uniform(-7, 7, size=(50, 3))
    in_grid[:, 2] = rng.uniform(-1.9, 1.9, size=50)
    xyz = np.concatenate([in_grid, [[99.0, 99.0, 99.0]]])
    scene = Scene(cloud=PointCloud(xyz, np.zeros((51, 1))), boxes=())
    grid = voxelize(scene.cloud, SPEC)
    result = hide_and_predict(scene, grid, HideConfig(100.0, 7))
    assert len(result.hidden_voxels) == len(grid.occupied)
    assert len(result.post_hide_cloud) == 1
    assert np.allclose(result.post_hide_cloud.xyz[0], [99.0, 99.0, 99.0])


def test_hide_count_and_determinism(rng):
    # exactly 40 occupied voxels -> gamma 25% hides exactly 10
    coords = rng.choice(16 * 16 * 4, size=40, replace=False)
    centers = SPEC.voxel_center(coords)
    scene = Scene(cloud=PointCloud(centers), boxes=())
    grid = voxelize(scene.cloud, SPEC)
    assert len(grid.occupied) == 40
    first = hide_and_predict(scene, grid, HideConfig(25.0, 11))
    again = hide_and_predict(scene, grid, HideConfig(25.0, 11))
    other = hide_and_predict(scene, grid, HideConfig(25.0, 12))
    assert len(first.hidden_voxels) == 10
    assert np.array_equal(first.hidden_voxels, again.hidden_voxels)
    assert not np.array_equal(first.hidden_voxels, other.hidden_voxels)


def test_hidden_count_rounds_half_up():
    assert hidden_voxel_count(25.0, 40) == 10
    assert hidden_voxel_count(25.0, 2) == 1  # 0.5 rounds up
    assert hidden_voxel_count(25.0, 1) == 0  # 0.25 rounds down
    assert hidden_voxel_count(50.0, 3) == 2  # 1.5 rounds up


def test_build_targets_toy_scene_by_hand():
    box = OrientedBox(0.5, 0.5, 0.5, 1.0, 1.0, 1.0, 0.0)
    pts = [[0.25, 0.25, 0.25], [0.75, 0.75, 0.75], [3.5, 3.5, 0.5], [-2.5, -2.5, -1.5]]
    scene = scene_with(pts, [box])
    targets = build_targets(scene, SPEC, area_radius=0, hide_cfg=HideConfig(0.0, 0))
    assert len(targets.voxels) == 3  # three occupied voxels
    by_voxel = dict(zip(targets.voxels.tolist(), targets.label.tolist()))
    fg_voxel = voxelize(scene.cloud, SPEC).point_to_voxel[0]
    assert by_voxel[int(fg_voxel)] == 1
    assert sum(by_voxel.values()) == 1
    pos = int(np.searchsorted(targets.voxels, fg_voxel))
    assert np.allclose(targets.targets.centroid[pos], [0.5, 0.5, 0.5])


def test_expansion_labels_empty_in_box_voxels():
    # 3x1x1 box centered on a voxel with one point; neighbors stay empty
    box = OrientedBox(0.5, 0.5, 0.5, 3.0, 1.0, 1.0, 0.0)
    scene = scene_with([[0.5, 0.5, 0.5]], [box])
    targets = build_targets(scene, SPEC, area_radius=2, hide_cfg=HideConfig(0.0, 0))
    ef = targets.category == VoxelCategory.EMPTY_FOREGROUND
    assert ef.sum() == 2  # voxels at x offsets -1 and +1
    assert np.all(targets.label[ef] == 1)
    centers = SPEC.voxel_center(targets.voxels[ef])
    assert np.allclose(sorted(centers[:, 0]), [-0.5, 1.5])


def test_expansion_off_restricts_area_to_occupancy(rng):
    scene = random_scene(rng, n_points=150, n_boxes=3)
    targets = build_targets(
        scene, SPEC, area_radius=4, hide_cfg=HideConfig(0.0, 0), expansion_enabled=False
    )
    grid = voxelize(scene.cloud, SPEC)
    assert np.array_equal(targets.voxels, grid.occupied)
    assert not np.any(targets.category == VoxelCategory.EMPTY_FOREGROUND)
    assert not np.any(targets.category == VoxelCategory.EMPTY_BACKGROUND)


def test_hiding_never_changes_labels(rng):
    for seed in range(5):
        scene = random_scene(np.random.default_rng(seed), n_points=250, n_boxes=3)
        plain = build_targets(scene, SPEC, 3, HideConfig(0.0, seed))
        hidden = build_targets(scene, SPEC, 3, HideConfig(40.0, seed))
        assert np.array_equal(plain.voxels, hidden.voxels)
        assert np.array_equal(plain.label, hidden.label)
        assert np.array_equal(plain.category, hidden.category)
        assert np.array_equal(plain.targets.valid, hidden.targets.valid)
        assert np.allclose(plain.targets.centroid, hidden.targets.centroid)


def test_post_hide_cloud_excludes_hidden_voxels(rng):
    scene = random_scene(rng, n_points=300, n_boxes=2)
    targets = build_targets(scene, SPEC, 2, HideConfig(30.0, 5))
    post_grid = voxelize(targets.post_hide_cloud, SPEC)
    assert not np.any(np.isin(post_grid.occupied, targets.hidden_voxels))


def test_centroids_stay_inside_voxels(rng):
    for seed in range(5):
        scene = random_scene(np.random.default_rng(100 + seed), n_points=300, n_boxes=4)
        targets = build_targets(scene, SPEC, 2, HideConfig(20.0, seed))
        valid = targets.targets.valid
        if not valid.any():
            continue
        vmin = SPEC.voxel_min(targets.voxels[valid])
        vmax = vmin + np.asarray(SPEC.voxel_size)
        chi = targets.targets.centroid[valid]
        assert np.all(chi >= vmin - 1e-12) and np.all(chi <= vmax + 1e-12)


def test_category_partition(rng):
    scene = random_scene(rng, n_points=200, n_boxes=3)
    targets = build_targets(scene, SPEC, 3, HideConfig(25.0, 3))
    grid = voxelize(scene.cloud, SPEC)
    occupied_mask = np.isin(targets.voxels, grid.occupied)
    occ_cats = {VoxelCategory.OCCUPIED_FOREGROUND, VoxelCategory.OCCUPIED_BACKGROUND}
    for j in range(len(targets.voxels)):
        cat = VoxelCategory(targets.category[j])
        assert (cat in occ_cats) == bool(occupied_mask[j])


def test_expansion_yields_no_fewer_foreground_voxels(rng):
    stricter = 0
    for seed in range(10):
        scene = random_scene(np.random.default_rng(200 + seed), n_points=250, n_boxes=3)
        with_exp = build_targets(scene, SPEC, 6, HideConfig(0.0, 0), expansion_enabled=True)
        without = build_targets(scene, SPEC, 6, HideConfig(0.0, 0), expansion_enabled=False)
        n_with, n_without = with_exp.label.sum(), without.label.sum()
        assert n_with >= n_without
        if np.any(with_exp.category == VoxelCategory.EMPTY_FOREGROUND):
            assert n_with > n_without
            stricter += 1
    assert stricter > 0


def test_pipeline_matches_reference(rng):
    for seed in range(8):
        scene = random_scene(np.random.default_rng(300 + seed), n_points=250, n_boxes=4)
        gamma = float(seed * 10 % 60)
        radius = seed % 4
        ours = build_targets(scene, SPEC, radius, HideConfig(gamma, seed))
        ref = reference_build_targets(scene, SPEC, radius, gamma, seed)
        assert np.array_equal(ours.voxels, ref["area"])
        assert np.array_equal(ours.label, ref["label"])
        assert np.array_equal(ours.category, ref["category"])
        assert np.array_equal(ours.hidden, ref["hidden"])
        assert np.array_equal(ours.hidden_voxels, ref["hidden_voxels"])
        assert np.array_equal(ours.targets.valid, ref["target_valid"])
        assert np.allclose(ours.targets.centroid, ref["target_centroid"], atol=1e-9)
        assert np.allclose(ours.targets.mean_props, ref["target_props"], atol=1e-9)
        kept = np.flatnonzero(
            ~np.isin(voxelize(scene.cloud, SPEC).point_to_voxel, ours.hidden_voxels)
        )
        assert np.array_equal(kept, ref["kept_points"])

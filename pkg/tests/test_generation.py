"""Semantic point selection, cloud merging, and the random-drop baseline."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spg.generation import GenerationConfig, SemanticPoints, augment, rnd_drop, select_points
from spg.geometry import PointCloud
from spg.network import VoxelPrediction

from conftest import random_cloud


def preds_from(p_fg, voxels=None, prop_count=1, rng=None):
    p_fg = np.asarray(p_fg, dtype=np.float64)
    m = len(p_fg)
    rng = rng or np.random.default_rng(0)
    return VoxelPrediction(
        voxels=np.arange(m, dtype=np.int64) if voxels is None else np.asarray(voxels),
        p_fg=p_fg,
        positions=rng.uniform(size=(m, 3)),
        props=rng.uniform(size=(m, prop_count)),
    )


def test_all_below_threshold_yields_nothing():
    sem = select_points(preds_from([0.5, 0.4, 0.1]), GenerationConfig(p_thresh=0.5))
    assert len(sem) == 0


def test_threshold_is_strict():
    sem = select_points(preds_from([0.5, 0.5000001]), GenerationConfig(p_thresh=0.5))
    assert sem.p_fg.tolist() == [0.5000001]


def test_topk_ordering_example():
    sem = select_points(preds_from([0.9, 0.6, 0.4]), GenerationConfig(p_thresh=0.5, k_max=2))
    assert sem.p_fg.tolist() == [0.9, 0.6]


def test_matches_full_sort_oracle_with_ties(rng):
    p = rng.choice([0.2, 0.55, 0.7, 0.7, 0.9], size=10_000, replace=True)
    voxels = np.arange(10_000, dtype=np.int64)
    cfg = GenerationConfig(p_thresh=0.5, k_max=500)
    sem = select_points(preds_from(p, voxels=voxels, rng=rng), cfg)

    surviving = [(float(p[i]), int(voxels[i])) for i in range(len(p)) if p[i] > cfg.p_thresh]
    surviving.sort(key=lambda pair: (-pair[0], pair[1]))
    expected = surviving[: cfg.k_max]
    assert [(float(s), int(v)) for s, v in zip(sem.p_fg, sem.voxels)] == expected


def test_emitted_count_bound(rng):
    p = rng.uniform(size=300)
    cfg = GenerationConfig(p_thresh=0.5, k_max=40)
    sem = select_points(preds_from(p, rng=rng), cfg)
    above = int(np.sum(p > 0.5))
    assert len(sem) == min(cfg.k_max, above)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_raising_threshold_never_emits_more(seed):
    rng = np.random.default_rng(seed)
    preds = preds_from(rng.uniform(size=200), rng=rng)
    counts = [
        len(select_points(preds, GenerationConfig(p_thresh=t, k_max=100)))
        for t in (0.3, 0.4, 0.5, 0.6, 0.7)
    ]
    assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_augment_merges_and_preserves_originals(rng):
    cloud = random_cloud(rng, 50)
    preds = preds_from(rng.uniform(size=30), rng=rng)
    sem = select_points(preds, GenerationConfig(p_thresh=0.4, k_max=10))
    aug = augment(cloud, sem, GenerationConfig())
    assert aug.semantic_boundary == 50
    assert len(aug) == 50 + len(sem)
    assert np.array_equal(aug.xyz[:50], cloud.xyz)
    assert np.array_equal(aug.props[:50], cloud.props)
    assert np.all(aug.confidence[:50] == 1.0)
    assert np.array_equal(aug.confidence[50:], sem.p_fg)
    table = aug.table()
    assert table.shape == (len(aug), 3 + cloud.prop_count + 1)


def test_augment_without_confidence_channel(rng):
    cloud = random_cloud(rng, 5)
    sem = SemanticPoints.empty(1)
    aug = augment(cloud, sem, GenerationConfig(confidence_channel=False))
    assert aug.confidence is None
    assert aug.table().shape == (5, 4)


def test_augment_no_semantic_points_adds_constant_channel(rng):
    cloud = random_cloud(rng, 7)
    aug = augment(cloud, SemanticPoints.empty(1), GenerationConfig())
    assert np.all(aug.confidence == 1.0)
    assert len(aug) == 7


def test_augment_empty_original(rng):
    preds = preds_from([0.9, 0.8], rng=rng)
    sem = select_points(preds, GenerationConfig(p_thresh=0.5))
    aug = augment(PointCloud.empty(1), sem, GenerationConfig())
    assert len(aug) == 2
    assert aug.semantic_boundary == 0
    assert np.array_equal(aug.confidence, sem.p_fg)


def test_augment_rejects_prop_mismatch(rng):
    cloud = random_cloud(rng, 3, prop_count=2)
    sem = SemanticPoints.empty(1)
    with pytest.raises(ValueError):
        augment(cloud, sem, GenerationConfig())


def test_generation_config_validation():
    with pytest.raises(ValueError):
        GenerationConfig(p_thresh=0.0)
    with pytest.raises(ValueError):
        GenerationConfig(p_thresh=1.0)
    with pytest.raises(ValueError):
        GenerationConfig(k_max=0)


def test_rnd_drop_rate_zero_is_identity(rng):
    cloud = random_cloud(rng, 100)
    out = rnd_drop(cloud, 0.0, seed=3)
    assert np.array_equal(out.xyz, cloud.xyz)


def test_rnd_drop_rate_one_empties(rng):
    cloud = random_cloud(rng, 100)
    assert len(rnd_drop(cloud, 1.0, seed=3)) == 0


def test_rnd_drop_seeded_and_binomial(rng):
    cloud = random_cloud(rng, 10_000)
    kept = len(rnd_drop(cloud, 0.17, seed=42))
    again = len(rnd_drop(cloud, 0.17, seed=42))
    assert kept == again
    mean, sigma = 10_000 * 0.83, (10_000 * 0.83 * 0.17) ** 0.5
    assert abs(kept - mean) <= 3 * sigma


def test_rnd_drop_subset_of_input(rng):
    cloud = random_cloud(rng, 500)
    out = rnd_drop(cloud, 0.4, seed=9)
    rows = {tuple(row) for row in cloud.xyz}
    assert all(tuple(row) in rows for row in out.xyz)

"""Semantic point emission: thresholding, top-K selection, cloud merging.

Predictions below or at the probability threshold are dropped, the survivors
are ranked by descending probability (ties by ascending voxel index) and
truncated to k_max, then appended to the original cloud. When the confidence
channel is enabled every point gains one extra property: 1.0 for original
points, the predicted foreground probability for generated ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud
from .network import VoxelPrediction


@dataclass(frozen=True)
class GenerationConfig:
    p_thresh: float = 0.5
    k_max: int = 8000
    confidence_channel: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.p_thresh < 1.0:
            raise ValueError(f"p_thresh must lie strictly in (0, 1), got {self.p_thresh}")
        if self.k_max < 1:
            raise ValueError(f"k_max must be positive, got {self.k_max}")


@dataclass
class SemanticPoints:
    """Generated points ordered by descending foreground probability."""

    positions: np.ndarray  # (K, 3)
    props: np.ndarray  # (K, F)
    p_fg: np.ndarray  # (K,)
    voxels: np.ndarray  # (K,) source voxel linear indices

    def __len__(self) -> int:
        return len(self.p_fg)

    @classmethod
    def empty(cls, prop_count: int) -> "SemanticPoints":
        return cls(
            positions=np.zeros((0, 3)),
            props=np.zeros((0, prop_count)),
            p_fg=np.zeros(0),
            voxels=np.zeros(0, dtype=np.int64),
        )


@dataclass
class AugmentedCloud:
    """Original points followed by semantic points, optional confidence column."""

    xyz: np.ndarray  # (N + K, 3)
    props: np.ndarray  # (N + K, F) original property channels
    confidence: np.ndarray | None  # (N + K,) or None when the channel is disabled
    semantic_boundary: int  # index where semantic points start

    @property
    def prop_count(self) -> int:
        return self.props.shape[1]

    def __len__(self) -> int:
        return len(self.xyz)

    def table(self) -> np.ndarray:
        """All channels as one (N+K, 3+F[+1]) array."""
        columns = [self.xyz, self.props]
        if self.confidence is not None:
            columns.append(self.confidence[:, None])
        return np.concatenate(columns, axis=1)


def select_points(preds: VoxelPrediction, cfg: GenerationConfig) -> SemanticPoints:
    """Threshold, rank and truncate predictions into semantic points.

    Keeps p_fg strictly above p_thresh, sorts by descending p_fg with ties
    broken by ascending voxel linear index, and keeps at most k_max points.
    """
    keep = preds.p_fg > cfg.p_thresh
    p = preds.p_fg[keep]
    voxels = preds.voxels[keep]
    positions = preds.positions[keep]
    props = preds.props[keep]
    # lexsort: descending probability, ties by ascending voxel index
    order = np.lexsort((voxels, -p))[: cfg.k_max]
    return SemanticPoints(
        positions=positions[order],
        props=props[order],
        p_fg=p[order],
        voxels=voxels[order],
    )


def augment(cloud: PointCloud, sem: SemanticPoints, cfg: GenerationConfig) -> AugmentedCloud:
    """Merge semantic points after the original cloud, never touching it."""
    if sem.props.shape[1] != cloud.prop_count:
        raise ValueError(
            f"semantic points carry {sem.props.shape[1]} props, cloud has {cloud.prop_count}"
        )
    xyz = np.concatenate([cloud.xyz, sem.positions], axis=0)
    props = np.concatenate([cloud.props, sem.props], axis=0)
    if cfg.confidence_channel:
        confidence = np.concatenate([np.ones(len(cloud)), sem.p_fg])
    else:
        confidence = None
    return AugmentedCloud(
        xyz=xyz, props=props, confidence=confidence, semantic_boundary=len(cloud)
    )


def rnd_drop(cloud: PointCloud, rate: float, seed: int) -> PointCloud:
    """Remove exactly round(rate * N) points, chosen uniformly without replacement.

    Dropping an exact share (rather than iid per-point coin flips) keeps the
    removed fraction at the configured rate for every seed; surviving points
    keep their original order.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"drop rate must be in [0, 1], got {rate}")
    n = len(cloud)
    n_drop = int(np.floor(rate * n + 0.5))
    keep = np.ones(n, dtype=bool)
    if n_drop:
        rng = np.random.Generator(np.random.PCG64(seed))
        keep[rng.choice(n, size=n_drop, replace=False)] = False
    return cloud.select(keep)

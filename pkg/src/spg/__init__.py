"""Semantic point generation for LiDAR-style point clouds.

The package turns point clouds plus oriented boxes into per-voxel training
targets, trains a small foreground-prediction network, and emits augmented
clouds whose extra points fill in predicted foreground regions.
"""

from .generation import AugmentedCloud, GenerationConfig, SemanticPoints, augment, rnd_drop, select_points
from .geometry import OrientedBox, Point, PointCloud, Scene, foreground_mask, point_in_box
from .losses import LossWeights, classification_loss, focal_loss, regression_loss
from .metrics import classifier_metrics, points_per_object_by_range
from .network import NetworkConfig, SPGModel, VoxelPrediction
from .supervision import (
    HideConfig,
    SupervisionTargets,
    VoxelCategory,
    build_targets,
    hide_and_predict,
    label_voxels,
    regression_targets,
)
from .synth import DegradationProfile, SceneRecipe, degrade, make_scene
from .voxelgrid import GenerationArea, GridSpec, VoxelGrid, generation_area, pillar_index, voxelize

__all__ = [
    "AugmentedCloud",
    "DegradationProfile",
    "GenerationArea",
    "GenerationConfig",
    "GridSpec",
    "HideConfig",
    "LossWeights",
    "NetworkConfig",
    "OrientedBox",
    "Point",
    "PointCloud",
    "SPGModel",
    "Scene",
    "SceneRecipe",
    "SemanticPoints",
    "SupervisionTargets",
    "VoxelCategory",
    "VoxelGrid",
    "VoxelPrediction",
    "augment",
    "build_targets",
    "classification_loss",
    "classifier_metrics",
    "degrade",
    "focal_loss",
    "foreground_mask",
    "generation_area",
    "hide_and_predict",
    "label_voxels",
    "make_scene",
    "pillar_index",
    "point_in_box",
    "points_per_object_by_range",
    "regression_loss",
    "regression_targets",
    "rnd_drop",
    "select_points",
    "voxelize",
]

__version__ = "0.1.0"

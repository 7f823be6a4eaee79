"""Run configuration: one JSON document with a section per subsystem.

Shipped defaults are the recommended operating point: hide 25% of occupied
voxels, empty-foreground weight 0.5, hidden-voxel weight 2.0, probability
threshold 0.5, generation-area radius 6, up to 8000 generated points.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

from .errors import UsageError
from .generation import GenerationConfig
from .losses import LossWeights
from .network import NetworkConfig
from .synth import DegradationProfile, SceneRecipe
from .voxelgrid import GridSpec

# k_max presets per dataset scale profile.
DATASET_KMAX = {"waymo": 8000, "kitti": 6000}


@dataclass(frozen=True)
class AreaConfig:
    radius: int = 6
    mode: str = "3d"  # dilate in 3D voxel steps, or "2d" for BEV-only

    def __post_init__(self) -> None:
        if self.radius < 0:
            raise ValueError("area radius must be non-negative")
        if self.mode not in ("3d", "2d"):
            raise ValueError(f"area mode must be '3d' or '2d', got {self.mode!r}")


@dataclass(frozen=True)
class HideSection:
    enabled: bool = True
    gamma_percent: float = 25.0
    rng_seed: int = 0

    @property
    def effective_gamma(self) -> float:
        return self.gamma_percent if self.enabled else 0.0


@dataclass(frozen=True)
class ExpansionSection:
    enabled: bool = True


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "sgd"
    learning_rate: float = 0.05
    momentum: float = 0.0
    steps: int = 200
    batch_size: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind != "sgd":
            raise ValueError(f"only the 'sgd' optimizer is available, got {self.kind!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")


@dataclass(frozen=True)
class EvalSection:
    recall_thresholds: int = 40
    range_bins: Tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0)


_DEFAULT_GRID = GridSpec(
    origin=(-12.8, -12.8, -1.2),
    voxel_size=(0.8, 0.8, 0.9),
    dims=(32, 32, 4),
)


@dataclass(frozen=True)
class RunConfig:
    grid: GridSpec = _DEFAULT_GRID
    area: AreaConfig = AreaConfig()
    hide: HideSection = HideSection()
    expansion: ExpansionSection = ExpansionSection()
    loss: LossWeights = LossWeights()
    network: NetworkConfig = NetworkConfig()
    generation: GenerationConfig = GenerationConfig()
    scene_recipe: SceneRecipe = SceneRecipe()
    degradation: DegradationProfile = DegradationProfile(mode="patchy")
    optimizer: OptimizerConfig = OptimizerConfig()
    eval: EvalSection = EvalSection()

    @property
    def inference_area_radius(self) -> int:
        """Generation-area radius actually used: 0 when expansion is off."""
        return self.area.radius if self.expansion.enabled else 0


_SECTION_TYPES = {
    "grid": GridSpec,
    "area": AreaConfig,
    "hide": HideSection,
    "expansion": ExpansionSection,
    "loss": LossWeights,
    "network": NetworkConfig,
    "generation": GenerationConfig,
    "scene_recipe": SceneRecipe,
    "degradation": DegradationProfile,
    "optimizer": OptimizerConfig,
    "eval": EvalSection,
}

_TUPLE_FIELDS = {
    "origin", "voxel_size", "dims", "n_objects", "length_range", "width_range",
    "height_range", "extent", "range_bins",
}


def _build_section(name: str, cls, overrides: dict):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(overrides) - known
    if unknown:
        raise UsageError(f"config section '{name}' has unknown keys: {sorted(unknown)}")
    converted = {}
    for key, value in overrides.items():
        if key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        converted[key] = value
    try:
        return cls(**converted)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"config section '{name}': {exc}") from exc


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise UsageError("config document must be a JSON object")
    unknown = set(doc) - set(_SECTION_TYPES)
    if unknown:
        raise UsageError(f"config has unknown sections: {sorted(unknown)}")
    sections = {}
    for name, cls in _SECTION_TYPES.items():
        overrides = doc.get(name, {})
        if not isinstance(overrides, dict):
            raise UsageError(f"config section '{name}' must be an object")
        if name == "grid" and not overrides:
            sections[name] = _DEFAULT_GRID
        else:
            base = dataclasses.asdict(getattr(RunConfig(), name)) if name != "grid" else {
                "origin": _DEFAULT_GRID.origin,
                "voxel_size": _DEFAULT_GRID.voxel_size,
                "dims": _DEFAULT_GRID.dims,
            }
            merged = {**base, **overrides}
            sections[name] = _build_section(name, cls, merged)
    return RunConfig(**sections)


def config_to_dict(cfg: RunConfig) -> dict:
    doc = {}
    for name in _SECTION_TYPES:
        doc[name] = dataclasses.asdict(getattr(cfg, name))
    return doc


def load_config(path: Path | str | None) -> RunConfig:
    """Load a config file; None yields the shipped defaults."""
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(doc)


ABLATION_FLAGS = ("no-expansion", "no-hide", "no-confidence")


def apply_ablations(cfg: RunConfig, flags: Tuple[str, ...]) -> RunConfig:
    """Return a config with the given strategy switches turned off."""
    for flag in flags:
        if flag not in ABLATION_FLAGS:
            raise UsageError(f"unknown ablation flag {flag!r}; known: {ABLATION_FLAGS}")
    if "no-expansion" in flags:
        cfg = dataclasses.replace(cfg, expansion=ExpansionSection(enabled=False))
    if "no-hide" in flags:
        cfg = dataclasses.replace(cfg, hide=dataclasses.replace(cfg.hide, enabled=False))
    if "no-confidence" in flags:
        cfg = dataclasses.replace(
            cfg, generation=dataclasses.replace(cfg.generation, confidence_channel=False)
        )
    return cfg

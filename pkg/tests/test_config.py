"""Config defaults, overrides, and ablation switches."""

import json

import pytest

from spg.config import (
    DATASET_KMAX,
    RunConfig,
    apply_ablations,
    config_from_dict,
    config_to_dict,
    load_config,
)
from spg.errors import UsageError


def test_shipped_defaults_are_published_constants():
    cfg = RunConfig()
    assert cfg.hide.gamma_percent == 25.0
    assert cfg.loss.alpha == 0.5
    assert cfg.loss.beta == 2.0
    assert cfg.generation.p_thresh == 0.5
    assert cfg.area.radius == 6
    assert cfg.generation.k_max == 8000
    assert DATASET_KMAX == {"waymo": 8000, "kitti": 6000}
    assert cfg.hide.enabled and cfg.expansion.enabled
    assert cfg.generation.confidence_channel
    # architecture defaults: 1 pointwise layer, 3 + (1 stride-2 + 4) convs
    assert cfg.network.vfe_layers == 1
    assert cfg.network.level1_convs == 3
    assert cfg.network.level2_convs == 4
    assert cfg.network.kernel_size == 3


def test_dict_roundtrip():
    cfg = RunConfig()
    doc = config_to_dict(cfg)
    again = config_from_dict(json.loads(json.dumps(doc)))
    assert again == cfg


def test_partial_override():
    cfg = config_from_dict({"loss": {"alpha": 0.9}, "generation": {"k_max": 6000}})
    assert cfg.loss.alpha == 0.9
    assert cfg.loss.beta == 2.0  # untouched default
    assert cfg.generation.k_max == 6000


def test_unknown_section_rejected():
    with pytest.raises(UsageError, match="unknown sections"):
        config_from_dict({"optimiser": {}})


def test_unknown_key_rejected():
    with pytest.raises(UsageError, match="unknown keys"):
        config_from_dict({"loss": {"alpa": 0.5}})


def test_invalid_value_rejected():
    with pytest.raises(UsageError):
        config_from_dict({"generation": {"p_thresh": 1.5}})
    with pytest.raises(UsageError):
        config_from_dict({"optimizer": {"kind": "adam"}})


def test_load_config_missing_file():
    with pytest.raises(UsageError):
        load_config("/nonexistent/config.json")


def test_load_config_none_gives_defaults():
    assert load_config(None) == RunConfig()


def test_load_config_from_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"hide": {"gamma_percent": 10.0}}))
    cfg = load_config(path)
    assert cfg.hide.gamma_percent == 10.0


def test_ablation_flags():
    cfg = RunConfig()
    off = apply_ablations(cfg, ("no-expansion", "no-hide", "no-confidence"))
    assert not off.expansion.enabled
    assert not off.hide.enabled
    assert off.hide.effective_gamma == 0.0
    assert not off.generation.confidence_channel
    assert off.inference_area_radius == 0
    with pytest.raises(UsageError):
        apply_ablations(cfg, ("no-such-flag",))


def test_grid_override():
    cfg = config_from_dict(
        {"grid": {"origin": [0, 0, 0], "voxel_size": [1, 1, 1], "dims": [4, 4, 2]}}
    )
    assert cfg.grid.dims == (4, 4, 2)

"""Foreground-prediction network: voxel feature encoding, BEV propagation,
and per-voxel point generation heads.

The architecture is a small encoder-decoder over bird's-eye-view pillar
features: a pointwise MLP plus voxel max-pool encodes occupied voxels, the
voxel features stack into pillars, two levels of 2D convolutions spread
information into neighboring (possibly empty) pillars, and two fully
connected heads emit per-voxel foreground probabilities and point features.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import PointCloud
from .voxelgrid import GenerationArea, GridSpec, VoxelGrid


@dataclass(frozen=True)
class NetworkConfig:
    """Layer widths and counts; defaults are the small, laptop-friendly configuration.

    channel_width 128 reproduces the full-size architecture.
    """

    channel_width: int = 16
    vfe_layers: int = 1
    level1_convs: int = 3
    level2_convs: int = 4  # stride-1 convs following the single stride-2 conv
    kernel_size: int = 3
    points_per_voxel_cap: int = 32
    prop_count: int = 0
    skip_connection: str = "concat"  # "concat" or "add"

    def __post_init__(self) -> None:
        if self.channel_width < 1:
            raise ValueError("channel_width must be positive")
        if self.vfe_layers < 1:
            raise ValueError("vfe_layers must be at least 1")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd")
        if self.points_per_voxel_cap < 1:
            raise ValueError("points_per_voxel_cap must be positive")
        if self.prop_count < 0:
            raise ValueError("prop_count must be non-negative")
        if self.skip_connection not in ("concat", "add"):
            raise ValueError(f"unknown skip_connection {self.skip_connection!r}")

    @property
    def point_feature_dim(self) -> int:
        return 3 + self.prop_count

    @property
    def head_input_channels(self) -> int:
        w = self.channel_width
        return 2 * w if self.skip_connection == "concat" else w


@dataclass
class VoxelPrediction:
    """Per generation-area voxel predictions (plain arrays, inference view)."""

    voxels: np.ndarray  # (M,) linear indices, sorted
    p_fg: np.ndarray  # (M,) in (0, 1)
    positions: np.ndarray  # (M, 3), each inside its voxel
    props: np.ndarray  # (M, F)


@dataclass
class NetworkOutputs:
    """Differentiable forward results aligned to the generation area."""

    voxels: np.ndarray
    prob: Tensor  # (M,) sigmoid outputs
    positions: Tensor  # (M, 3)
    props: Tensor  # (M, F)

    def to_prediction(self) -> VoxelPrediction:
        return VoxelPrediction(
            voxels=self.voxels,
            p_fg=self.prob.data.copy(),
            positions=self.positions.data.copy(),
            props=self.props.data.copy(),
        )


class SPGModel:
    """Parameter container plus the forward pass.

    Parameters live in a name -> Tensor dict with a stable naming scheme, so
    checkpoints and the random-init stream are reproducible.
    """

    def __init__(self, cfg: NetworkConfig, grid: GridSpec, params: Dict[str, Tensor]):
        self.cfg = cfg
        self.grid = grid
        self.params = params
        self.dtype = next(iter(params.values())).dtype if params else np.float64

    def _const(self, data) -> Tensor:
        return ad.constant(data, dtype=self.dtype)

    # -- construction -------------------------------------------------------

    @staticmethod
    def param_shapes(cfg: NetworkConfig, grid: GridSpec) -> Dict[str, Tuple[int, ...]]:
        w = cfg.channel_width
        k = cfg.kernel_size
        _, _, nz = grid.dims
        shapes: Dict[str, Tuple[int, ...]] = {}
        in_dim = cfg.point_feature_dim
        for i in range(cfg.vfe_layers):
            shapes[f"vfe{i}.weight"] = (in_dim, w)
            shapes[f"vfe{i}.bias"] = (w,)
            in_dim = w
        conv_in = w * nz
        for i in range(cfg.level1_convs):
            shapes[f"level1.{i}.weight"] = (w, conv_in, k, k)
            shapes[f"level1.{i}.bias"] = (w,)
            conv_in = w
        shapes["level2.0.weight"] = (w, w, k, k)  # stride 2
        shapes["level2.0.bias"] = (w,)
        for i in range(1, cfg.level2_convs + 1):
            shapes[f"level2.{i}.weight"] = (w, w, k, k)
            shapes[f"level2.{i}.bias"] = (w,)
        head_in = cfg.head_input_channels
        shapes["head_prob.weight"] = (head_in, nz)
        shapes["head_prob.bias"] = (nz,)
        feat_out = nz * cfg.point_feature_dim
        shapes["head_feat.weight"] = (head_in, feat_out)
        shapes["head_feat.bias"] = (feat_out,)
        return shapes

    @classmethod
    def build(
        cls,
        cfg: NetworkConfig,
        grid: GridSpec,
        init: str = "random",
        seed: int = 0,
        dtype=np.float64,
    ) -> "SPGModel":
        """Create a model with random (He-style) or all-zero parameters.

        Random draws consume one stream in fixed parameter-name order, so a
        seed pins every weight.
        """
        shapes = cls.param_shapes(cfg, grid)
        rng = np.random.Generator(np.random.PCG64(seed))
        params: Dict[str, Tensor] = {}
        for name, shape in shapes.items():
            if init == "zeros":
                data = np.zeros(shape)
            elif init == "random":
                if name.endswith(".bias"):
                    data = np.zeros(shape)
                elif name.startswith("head_"):
                    data = rng.normal(0.0, 0.01, size=shape)
                else:
                    fan_in = int(np.prod(shape[:-1])) if len(shape) == 2 else int(np.prod(shape[1:]))
                    data = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
            else:
                raise ValueError(f"unknown init {init!r}")
            params[name] = ad.parameter(data, dtype=dtype)
        return cls(cfg, grid, params)

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def load_state(self, arrays: Dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in arrays:
                raise KeyError(f"checkpoint missing parameter {name}")
            if arrays[name].shape != p.data.shape:
                raise ValueError(
                    f"parameter {name}: checkpoint shape {arrays[name].shape} != {p.data.shape}"
                )
            p.data = arrays[name].astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    # -- forward pieces ------------------------------------------------------

    def vfe_encode(self, grid: VoxelGrid, cloud: PointCloud) -> Tuple[Tensor, np.ndarray]:
        """Encode each occupied voxel into one feature vector.

        Per-point inputs are xyz relative to the voxel center plus the raw
        properties; a pointwise linear+relu stack maps them to channel_width
        and a per-voxel max pools them. Voxels holding more than
        points_per_voxel_cap points keep their lowest-index points.
        """
        cfg = self.cfg
        if cloud.prop_count != cfg.prop_count:
            raise ValueError(
                f"cloud has {cloud.prop_count} props but network expects {cfg.prop_count}"
            )
        occupied = grid.occupied
        n_voxels = len(occupied)
        if n_voxels == 0:
            return self._const(np.zeros((0, cfg.channel_width))), occupied

        member_lists = [grid.voxel_points[int(v)][: cfg.points_per_voxel_cap] for v in occupied]
        pad = max(len(m) for m in member_lists)
        feats = np.zeros((n_voxels, pad, cfg.point_feature_dim), dtype=np.float64)
        mask = np.zeros((n_voxels, pad), dtype=bool)
        centers = grid.spec.voxel_center(occupied)
        for i, members in enumerate(member_lists):
            k = len(members)
            feats[i, :k, :3] = cloud.xyz[members] - centers[i]
            feats[i, :k, 3:] = cloud.props[members]
            mask[i, :k] = True

        x = self._const(feats.reshape(n_voxels * pad, cfg.point_feature_dim))
        for layer in range(cfg.vfe_layers):
            x = ad.matmul(x, self.params[f"vfe{layer}.weight"])
            x = ad.bias_add_rows(x, self.params[f"vfe{layer}.bias"])
            x = ad.relu(x)
        x = ad.reshape(x, (n_voxels, pad, cfg.channel_width))
        return ad.padded_setmax(x, mask), occupied

    def scatter_to_bev(self, voxel_feats: Tensor, voxels: np.ndarray) -> Tensor:
        """Stack voxel features into pillars: a (channel_width*nz, ny, nx) map.

        Channel block [z*W, (z+1)*W) holds slot z; empty voxels contribute
        zeros.
        """
        nx, ny, nz = self.grid.dims
        w = self.cfg.channel_width
        dense = ad.scatter_rows(voxel_feats, voxels, nx * ny * nz)
        dense = ad.reshape(dense, (nz, ny, nx, w))
        dense = ad.permute(dense, (0, 3, 1, 2))  # (nz, W, ny, nx)
        return ad.reshape(dense, (nz * w, ny, nx))

    def gather_from_bev(self, bev: Tensor, voxels: np.ndarray) -> Tensor:
        """Inverse of scatter_to_bev: per-voxel rows from a pillar-stacked map."""
        nx, ny, nz = self.grid.dims
        w = bev.shape[0] // nz
        dense = ad.reshape(bev, (nz, w, ny, nx))
        dense = ad.permute(dense, (0, 2, 3, 1))
        rows = ad.reshape(dense, (nz * ny * nx, w))
        return ad.take_rows(rows, voxels)

    def _conv_block(self, x: Tensor, name: str, stride: int) -> Tensor:
        pad = self.cfg.kernel_size // 2
        x = ad.conv2d(x, self.params[f"{name}.weight"], stride=stride, padding=pad)
        x = ad.bias_add_channels(x, self.params[f"{name}.bias"])
        return ad.relu(x)

    def propagate(self, bev: Tensor) -> Tensor:
        """Two-level conv stack with an upsampled skip connection.

        Odd spatial dims are zero-padded to even before the stride-2 level and
        the result is cropped back.
        """
        _, ny, nx = bev.shape
        pad_h, pad_w = ny % 2, nx % 2
        if pad_h or pad_w:
            bev = ad.pad2d(bev, pad_h, pad_w)
        x = bev
        for i in range(self.cfg.level1_convs):
            x = self._conv_block(x, f"level1.{i}", stride=1)
        level1 = x
        x = self._conv_block(x, "level2.0", stride=2)
        for i in range(1, self.cfg.level2_convs + 1):
            x = self._conv_block(x, f"level2.{i}", stride=1)
        x = ad.upsample_nearest(x, 2)
        if self.cfg.skip_connection == "concat":
            x = ad.concat_channels(level1, x)
        else:
            x = ad.add(level1, x)
        if pad_h or pad_w:
            x = ad.crop2d(x, ny, nx)
        return x

    def generate_heads(self, features: Tensor, area: GenerationArea) -> NetworkOutputs:
        """Per-voxel predictions for every generation-area voxel.

        One FC layer emits nz foreground logits per pillar, another emits
        nz*(3+F) feature values. Predicted positions are sigmoid-bounded to
        the voxel, so every generated point lies inside its voxel.
        """
        nx, ny, nz = self.grid.dims
        d = self.cfg.point_feature_dim
        ch = features.shape[0]
        flat = ad.transpose2d(ad.reshape(features, (ch, ny * nx)))  # (ny*nx, ch)

        prob_all = ad.bias_add_rows(
            ad.matmul(flat, self.params["head_prob.weight"]), self.params["head_prob.bias"]
        )
        feat_all = ad.bias_add_rows(
            ad.matmul(flat, self.params["head_feat.weight"]), self.params["head_feat.bias"]
        )

        coords = self.grid.voxel_coords(area.indices)
        pillar = coords[:, 1] * nx + coords[:, 0]
        slot = coords[:, 2]
        m = len(area.indices)

        logits = ad.take2d(prob_all, pillar, slot)
        prob = ad.sigmoid(logits)

        rows = np.repeat(pillar, 3)
        cols = (slot[:, None] * d + np.arange(3)[None, :]).reshape(-1)
        pos_raw = ad.reshape(ad.take2d(feat_all, rows, cols), (m, 3))
        vmin = self.grid.voxel_min(area.indices)
        vsize = np.broadcast_to(np.asarray(self.grid.voxel_size), (m, 3)).copy()
        positions = ad.add(
            ad.mul(ad.sigmoid(pos_raw), self._const(vsize)), self._const(vmin)
        )

        f = self.cfg.prop_count
        if f:
            rows = np.repeat(pillar, f)
            cols = (slot[:, None] * d + 3 + np.arange(f)[None, :]).reshape(-1)
            props = ad.reshape(ad.take2d(feat_all, rows, cols), (m, f))
        else:
            props = self._const(np.zeros((m, 0)))
        return NetworkOutputs(voxels=area.indices, prob=prob, positions=positions, props=props)

    def forward(self, cloud: PointCloud, grid: VoxelGrid, area: GenerationArea) -> NetworkOutputs:
        """Full pass: VFE, pillar scatter, propagation, generation heads.

        `grid` must be the voxelization of `cloud` (the observed, possibly
        post-hiding cloud); `area` selects the voxels to predict.
        """
        feats, occupied = self.vfe_encode(grid, cloud)
        nx, ny, nz = self.grid.dims
        if len(occupied):
            bev = self.scatter_to_bev(feats, occupied)
        else:
            bev = self._const(np.zeros((self.cfg.channel_width * nz, ny, nx)))
        features = self.propagate(bev)
        return self.generate_heads(features, area)

    def predict(self, cloud: PointCloud, grid: VoxelGrid, area: GenerationArea) -> VoxelPrediction:
        """Inference-only forward returning plain arrays."""
        return self.forward(cloud, grid, area).to_prediction()

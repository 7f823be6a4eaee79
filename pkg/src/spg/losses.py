"""Classification and feature-regression objectives.

The classification loss is a category-weighted focal loss over generation-
area voxels: occupied and empty-background voxels at weight 1, empty
foreground voxels at alpha, hidden voxels at beta. Each group is normalized
by its own size; a hidden voxel contributes only under beta (it is removed
from the occupied/background group so beta acts as a pure reweighting).

The regression loss is an elementwise smooth-L1 over the (3+F)-dim point
feature vector, on occupied-foreground voxels at weight 1 and hidden
foreground voxels at beta, restricted to voxels that actually have a valid
target (at least one pre-hiding foreground point).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .network import NetworkOutputs, VoxelPrediction
from .supervision import SupervisionTargets, VoxelCategory

# Probabilities are clipped to this band before any log; the scalar
# focal_loss API instead rejects exact 0/1 outright.
PROB_EPS = 1e-6


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.5  # empty-foreground voxel weight
    beta: float = 2.0  # hidden voxel weight
    focal_gamma: float = 2.0  # focusing exponent
    focal_balance: float = 0.25  # positive-class balance
    normalized_position_residuals: bool = True  # position residuals in voxel units

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0 or self.focal_gamma < 0:
            raise ValueError("alpha, beta and focal_gamma must be non-negative")
        if not 0.0 < self.focal_balance < 1.0:
            raise ValueError("focal_balance must lie strictly in (0, 1)")


def _focal_sum(p: Tensor, labels: np.ndarray, w: LossWeights) -> Tensor:
    """Sum of focal losses over a set: -a_t * (1 - p_t)^gamma * ln(p_t)."""
    y = np.asarray(labels, dtype=p.dtype)
    p_t = ad.add(ad.mul(p, ad.constant(2.0 * y - 1.0, dtype=p.dtype)), ad.constant(1.0 - y, dtype=p.dtype))
    a_t = w.focal_balance * y + (1.0 - w.focal_balance) * (1.0 - y)
    one_minus = ad.add(ad.neg(p_t), ad.constant(np.ones_like(y), dtype=p.dtype))
    per_voxel = ad.neg(
        ad.mul(ad.constant(a_t, dtype=p.dtype), ad.mul(ad.powc(one_minus, w.focal_gamma), ad.log(p_t)))
    )
    return ad.tensor_sum(per_voxel)


def focal_loss(p: float, y: int, w: LossWeights) -> float:
    """Focal loss for a single probability/label pair; p must be in (0, 1)."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"focal_loss requires p strictly inside (0, 1), got {p}")
    if y not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {y}")
    return _focal_sum(ad.constant([p]), np.array([float(y)]), w).item()


def _check_alignment(voxels: np.ndarray, targets: SupervisionTargets) -> None:
    if not np.array_equal(voxels, targets.voxels):
        raise ValueError("predictions and targets cover different generation areas")


def _category_sets(targets: SupervisionTargets) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    cat = targets.category
    hidden = targets.hidden
    plain = ~hidden & (
        (cat == VoxelCategory.OCCUPIED_FOREGROUND)
        | (cat == VoxelCategory.OCCUPIED_BACKGROUND)
        | (cat == VoxelCategory.EMPTY_BACKGROUND)
    )
    empty_fg = ~hidden & (cat == VoxelCategory.EMPTY_FOREGROUND)
    return plain, empty_fg, hidden


def classification_loss_tensor(
    prob: Tensor, voxels: np.ndarray, targets: SupervisionTargets, w: LossWeights
) -> Tensor:
    """Differentiable category-weighted focal loss; empty groups contribute 0."""
    _check_alignment(voxels, targets)
    p = ad.clamp(prob, PROB_EPS, 1.0 - PROB_EPS)
    label = targets.label.astype(np.float64)
    plain, empty_fg, hidden = _category_sets(targets)

    total = ad.constant(np.asarray(0.0), dtype=prob.dtype)
    for mask, weight in ((plain, 1.0), (empty_fg, w.alpha), (hidden, w.beta)):
        idx = np.flatnonzero(mask)
        if len(idx) == 0:
            continue
        group = _focal_sum(ad.take_rows(p, idx), label[idx], w)
        total = ad.add(total, ad.scale(group, weight / len(idx)))
    return total


def classification_loss(
    preds: VoxelPrediction, targets: SupervisionTargets, w: LossWeights
) -> float:
    return classification_loss_tensor(
        ad.constant(preds.p_fg), preds.voxels, targets, w
    ).item()


def _residuals(
    positions: Tensor, props: Tensor, targets: SupervisionTargets, w: LossWeights
) -> Tuple[Tensor, Tensor]:
    m = positions.shape[0]
    pos_resid = ad.sub(positions, ad.constant(targets.targets.centroid, dtype=positions.dtype))
    if w.normalized_position_residuals:
        inv_size = 1.0 / np.asarray(targets.spec.voxel_size)
        pos_resid = ad.mul(
            pos_resid,
            ad.constant(np.broadcast_to(inv_size, (m, 3)).copy(), dtype=positions.dtype),
        )
    prop_resid = ad.sub(props, ad.constant(targets.targets.mean_props, dtype=props.dtype))
    return pos_resid, prop_resid


def regression_loss_tensor(
    positions: Tensor,
    props: Tensor,
    voxels: np.ndarray,
    targets: SupervisionTargets,
    w: LossWeights,
) -> Tensor:
    """Differentiable smooth-L1 feature loss; empty groups contribute 0."""
    _check_alignment(voxels, targets)
    cat = targets.category
    hidden = targets.hidden
    valid = targets.targets.valid
    observed_fg = ~hidden & (cat == VoxelCategory.OCCUPIED_FOREGROUND) & valid
    hidden_fg = hidden & (targets.label == 1) & valid

    pos_resid, prop_resid = _residuals(positions, props, targets, w)
    total = ad.constant(np.asarray(0.0), dtype=positions.dtype)
    for mask, weight in ((observed_fg, 1.0), (hidden_fg, w.beta)):
        idx = np.flatnonzero(mask)
        if len(idx) == 0:
            continue
        group = ad.tensor_sum(ad.smooth_l1(ad.take_rows(pos_resid, idx)))
        if prop_resid.shape[1]:
            group = ad.add(
                group, ad.tensor_sum(ad.smooth_l1(ad.take_rows(prop_resid, idx)))
            )
        total = ad.add(total, ad.scale(group, weight / len(idx)))
    return total


def regression_loss(
    preds: VoxelPrediction, targets: SupervisionTargets, w: LossWeights
) -> float:
    return regression_loss_tensor(
        ad.constant(preds.positions),
        ad.constant(preds.props),
        preds.voxels,
        targets,
        w,
    ).item()


def total_loss_tensor(
    outputs: NetworkOutputs, targets: SupervisionTargets, w: LossWeights
) -> Tuple[Tensor, Tensor, Tensor]:
    """(total, classification, regression) losses as tensors."""
    cls = classification_loss_tensor(outputs.prob, outputs.voxels, targets, w)
    reg = regression_loss_tensor(
        outputs.positions, outputs.props, outputs.voxels, targets, w
    )
    return ad.add(cls, reg), cls, reg

"""Training loop: plain SGD (optional momentum) over per-scene losses.

Each step samples a batch of scenes, rebuilds their supervision targets with
a fresh hide selection (seeded by (run seed, step, scene index), so runs are
bit-reproducible), accumulates gradients of the summed classification and
regression losses, and applies one parameter update. Batch sampling is
stateless per step, which lets a resumed run continue the exact sequence of
an unbroken one.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .autodiff import Tape, Tensor
from .config import RunConfig
from .geometry import Scene
from .losses import total_loss_tensor
from .network import SPGModel
from .supervision import HideConfig, SupervisionTargets, build_targets
from .voxelgrid import voxelize


def derive_seed(*entropy: int) -> int:
    """Stable child seed from an integer tuple (one documented stream layout)."""
    return int(np.random.SeedSequence(tuple(int(e) for e in entropy)).generate_state(1, np.uint64)[0])


def scene_targets(scene: Scene, cfg: RunConfig, hide_seed: int) -> SupervisionTargets:
    hide_cfg = HideConfig(gamma_percent=cfg.hide.effective_gamma, rng_seed=hide_seed)
    return build_targets(
        scene,
        cfg.grid,
        cfg.area.radius,
        hide_cfg,
        expansion_enabled=cfg.expansion.enabled,
        area_mode=cfg.area.mode,
    )


@dataclass
class StepRecord:
    step: int
    loss: float
    cls_loss: float
    reg_loss: float

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "loss": self.loss,
            "cls_loss": self.cls_loss,
            "reg_loss": self.reg_loss,
        }


class SGD:
    """SGD with optional momentum over a named parameter dict."""

    def __init__(self, params: Dict[str, Tensor], momentum: float = 0.0):
        self.params = params
        self.momentum = momentum
        self.velocity: Optional[Dict[str, np.ndarray]] = (
            {name: np.zeros_like(p.data) for name, p in params.items()} if momentum else None
        )

    def step(self, grads: Dict[str, np.ndarray], learning_rate: float) -> None:
        for name, param in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            if self.velocity is not None:
                self.velocity[name] = self.momentum * self.velocity[name] + g
                g = self.velocity[name]
            param.data = param.data - learning_rate * g


def _scene_loss_and_grads(
    model: SPGModel, scene: Scene, cfg: RunConfig, hide_seed: int
) -> tuple[float, float, float, Dict[str, np.ndarray]]:
    """Forward/backward on one scene; returns losses and parameter gradients."""
    targets = scene_targets(scene, cfg, hide_seed)
    post_grid = voxelize(targets.post_hide_cloud, cfg.grid)
    model.zero_grad()
    with Tape() as tape:
        outputs = model.forward(targets.post_hide_cloud, post_grid, targets.area)
        total, cls, reg = total_loss_tensor(outputs, targets, cfg.loss)
    tape.backward(total)
    grads = {name: p.grad for name, p in model.params.items() if p.grad is not None}
    return total.item(), cls.item(), reg.item(), grads


def _shadow_model(model: SPGModel) -> SPGModel:
    """Per-thread view sharing parameter data but not gradient buffers."""
    # np.asarray with the matching dtype aliases the arrays, so the shadow
    # tensors read the live parameters while keeping private .grad buffers.
    params = {
        name: Tensor(p.data, requires_grad=True, dtype=p.data.dtype)
        for name, p in model.params.items()
    }
    return SPGModel(model.cfg, model.grid, params)


def train_model(
    model: SPGModel,
    scenes: Sequence[Scene],
    cfg: RunConfig,
    start_step: int = 0,
    optimizer: Optional[SGD] = None,
    on_step: Optional[Callable[[StepRecord], None]] = None,
    workers: int = 1,
) -> List[StepRecord]:
    """Run cfg.optimizer.steps - start_step updates; returns per-step records.

    With workers > 1, per-scene gradients are computed in a thread pool and
    merged in completion order; that mode is not bit-deterministic.
    """
    if not scenes:
        raise ValueError("cannot train on an empty scene list")
    opt_cfg = cfg.optimizer
    optimizer = optimizer or SGD(model.params, momentum=opt_cfg.momentum)
    history: List[StepRecord] = []
    merge_lock = threading.Lock()

    for step in range(start_step, opt_cfg.steps):
        batch_rng = np.random.Generator(np.random.PCG64(derive_seed(opt_cfg.seed, step)))
        batch = batch_rng.integers(0, len(scenes), size=opt_cfg.batch_size)
        jobs = [
            (int(idx), derive_seed(opt_cfg.seed, step, int(idx), pos))
            for pos, idx in enumerate(batch)
        ]

        sum_grads: Dict[str, np.ndarray] = {}
        totals = np.zeros(3)

        def merge(result) -> None:
            total, cls, reg, grads = result
            with merge_lock:
                totals[:] += (total, cls, reg)
                for name, g in grads.items():
                    if name in sum_grads:
                        sum_grads[name] = sum_grads[name] + g
                    else:
                        sum_grads[name] = g

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = [
                    pool.submit(_scene_loss_and_grads, _shadow_model(model), scenes[idx], cfg, seed)
                    for idx, seed in jobs
                ]
                for future in as_completed(futures):
                    merge(future.result())
        else:
            for idx, seed in jobs:
                merge(_scene_loss_and_grads(model, scenes[idx], cfg, seed))

        mean_grads = {name: g / len(jobs) for name, g in sum_grads.items()}
        optimizer.step(mean_grads, opt_cfg.learning_rate)
        record = StepRecord(
            step=step,
            loss=float(totals[0] / len(jobs)),
            cls_loss=float(totals[1] / len(jobs)),
            reg_loss=float(totals[2] / len(jobs)),
        )
        history.append(record)
        if on_step is not None:
            on_step(record)
    return history


# -- training state (de)serialization ---------------------------------------

PARAM_PREFIX = "param/"
MOMENTUM_PREFIX = "momentum/"


def training_state_arrays(model: SPGModel, optimizer: SGD, step: int) -> Dict[str, np.ndarray]:
    arrays: Dict[str, np.ndarray] = {PARAM_PREFIX + n: p.data for n, p in model.params.items()}
    if optimizer.velocity is not None:
        arrays.update({MOMENTUM_PREFIX + n: v for n, v in optimizer.velocity.items()})
    arrays["step"] = np.asarray([step], dtype=np.int64)
    return arrays


def split_training_state(arrays: Dict[str, np.ndarray]):
    """-> (params, momentum or None, step)."""
    params = {
        name[len(PARAM_PREFIX) :]: a for name, a in arrays.items() if name.startswith(PARAM_PREFIX)
    }
    momentum = {
        name[len(MOMENTUM_PREFIX) :]: a
        for name, a in arrays.items()
        if name.startswith(MOMENTUM_PREFIX)
    }
    step = int(arrays["step"][0]) if "step" in arrays else 0
    return params, (momentum or None), step

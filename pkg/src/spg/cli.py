"""Command-line surface.

Subcommands: synth, make-targets, train, generate, eval. Exit codes:
0 success, 1 usage error, 2 data error, 3 internal invariant violation.
SPG_THREADS caps per-scene worker threads for the embarrassingly parallel
commands; train stays single-threaded unless --parallel is passed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, List, Optional, Sequence, TypeVar

import numpy as np

from . import fileio, metrics
from .config import ABLATION_FLAGS, RunConfig, apply_ablations, load_config
from .errors import DataError, InternalError, UsageError
from .generation import augment, select_points
from .geometry import Scene
from .network import SPGModel
from .supervision import HideConfig, build_targets
from .synth import PlacementError, degrade, make_scene
from .train import (
    SGD,
    derive_seed,
    scene_targets,
    split_training_state,
    train_model,
    training_state_arrays,
)
from .voxelgrid import generation_area, voxelize

T = TypeVar("T")


def worker_count() -> int:
    raw = os.environ.get("SPG_THREADS", "1")
    try:
        count = int(raw)
    except ValueError as exc:
        raise UsageError(f"SPG_THREADS must be an integer, got {raw!r}") from exc
    return max(1, count)


def _map_scenes(fn: Callable[[T], object], items: Sequence[T]) -> List[object]:
    """Apply a pure per-item function, optionally in SPG_THREADS workers.

    Results come back in input order, so the output is independent of the
    worker count.
    """
    workers = worker_count()
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse default exits with code 2
        raise UsageError(message)


def _scene_paths(scenes_arg: str) -> List[Path]:
    path = Path(scenes_arg)
    if path.is_dir():
        found = sorted(path.glob("*.json"))
        if not found:
            raise DataError(f"no scene files (*.json) under {path}")
        return found
    if not path.exists():
        raise DataError(f"scene path {path} does not exist")
    return [path]


def _load_scenes(scenes_arg: str) -> List[Scene]:
    return list(_map_scenes(fileio.load_scene, _scene_paths(scenes_arg)))


def _load_model(cfg: RunConfig, checkpoint: Optional[str]) -> SPGModel:
    model = SPGModel.build(cfg.network, cfg.grid, init="zeros")
    if checkpoint is not None:
        params, _, _ = split_training_state(fileio.load_checkpoint(checkpoint))
        if not params:
            raise DataError(f"{checkpoint} holds no parameters")
        model.load_state(params)
    return model


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.count < 0:
        raise UsageError("--count must be non-negative")

    def build(index: int) -> str:
        recipe = dataclasses.replace(cfg.scene_recipe, seed=derive_seed(cfg.scene_recipe.seed, index))
        try:
            scene = make_scene(recipe)
        except PlacementError as exc:
            raise DataError(str(exc)) from exc
        if args.profile == "rainy":
            profile = dataclasses.replace(
                cfg.degradation, seed=derive_seed(cfg.degradation.seed, index)
            )
            scene = degrade(scene, profile)
        scene.meta = {"weather": args.profile, "index": str(index)}
        name = f"scene_{index:04d}"
        fileio.save_scene(out_dir / f"{name}.json", scene, f"{name}.spgc")
        return name

    names = _map_scenes(build, list(range(args.count)))
    print(f"wrote {len(names)} {args.profile} scene(s) to {out_dir}")
    return 0


def cmd_make_targets(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = _scene_paths(args.scenes)

    def build(path: Path) -> str:
        scene = fileio.load_scene(path)
        hide_cfg = HideConfig(
            gamma_percent=cfg.hide.effective_gamma,
            rng_seed=derive_seed(cfg.hide.rng_seed, _scene_index(path)),
        )
        targets = build_targets(
            scene,
            cfg.grid,
            cfg.area.radius,
            hide_cfg,
            expansion_enabled=cfg.expansion.enabled,
            area_mode=cfg.area.mode,
        )
        out_path = out_dir / (path.stem + ".spgt")
        fileio.save_targets(out_path, targets)
        return out_path.name

    names = _map_scenes(build, paths)
    print(f"wrote {len(names)} target file(s) to {out_dir}")
    return 0


def _scene_index(path: Path) -> int:
    """Stable per-scene integer: trailing digits of the stem, else a hash."""
    digits = "".join(ch for ch in path.stem if ch.isdigit())
    if digits:
        return int(digits) % (2**31)
    return sum(path.stem.encode()) % (2**31)


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    scenes = _load_scenes(args.scenes)
    model = SPGModel.build(cfg.network, cfg.grid, init="random", seed=cfg.optimizer.seed)
    optimizer = SGD(model.params, momentum=cfg.optimizer.momentum)
    start_step = 0
    if args.resume:
        params, momentum, start_step = split_training_state(fileio.load_checkpoint(args.resume))
        model.load_state(params)
        if momentum:
            if optimizer.velocity is None:
                raise DataError(f"{args.resume} has momentum state but momentum is disabled")
            missing = set(optimizer.velocity) - set(momentum)
            if missing:
                raise DataError(f"{args.resume} momentum state is missing {sorted(missing)}")
            optimizer.velocity = {n: momentum[n].astype(np.float64) for n in optimizer.velocity}

    log_fh = open(args.log, "w", encoding="utf-8") if args.log else None
    try:
        def on_step(record) -> None:
            if log_fh is not None:
                log_fh.write(json.dumps(record.to_dict()) + "\n")

        workers = worker_count() if args.parallel else 1
        history = train_model(
            model, scenes, cfg, start_step=start_step, optimizer=optimizer,
            on_step=on_step, workers=workers,
        )
    finally:
        if log_fh is not None:
            log_fh.close()

    fileio.save_checkpoint(
        args.checkpoint_out,
        training_state_arrays(model, optimizer, cfg.optimizer.steps),
        float_dtype="f64",
    )
    if history:
        print(
            f"trained {len(history)} step(s): loss {history[0].loss:.6f} -> {history[-1].loss:.6f}"
        )
    else:
        print("no steps to run")
    print(f"checkpoint written to {args.checkpoint_out}")
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    scene = fileio.load_scene(args.scene)
    model = _load_model(cfg, args.checkpoint)
    grid = voxelize(scene.cloud, cfg.grid)
    area = generation_area(grid, cfg.inference_area_radius, mode=cfg.area.mode)
    preds = model.predict(scene.cloud, grid, area)
    sem = select_points(preds, cfg.generation)
    aug = augment(scene.cloud, sem, cfg.generation)
    fileio.write_augmented_cloud(args.out, aug)
    if args.export_ply:
        confidence = (
            aug.confidence
            if aug.confidence is not None
            else np.concatenate([np.ones(aug.semantic_boundary), sem.p_fg])
        )
        fileio.write_ply(
            args.export_ply, aug.xyz, fileio.confidence_colors(confidence, aug.semantic_boundary)
        )
    print(f"{len(sem)} semantic point(s) added to {len(scene.cloud)} original; wrote {args.out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    ablations = tuple(f for f in (args.ablate.split(",") if args.ablate else []) if f)
    cfg = apply_ablations(cfg, ablations)
    scenes = _load_scenes(args.scenes)
    model = _load_model(cfg, args.checkpoint)
    eval_cfg = dataclasses.replace(cfg, hide=dataclasses.replace(cfg.hide, enabled=False))

    def pairs_for(scene: Scene):
        targets = scene_targets(scene, eval_cfg, hide_seed=0)
        grid = voxelize(scene.cloud, cfg.grid)
        preds = model.predict(scene.cloud, grid, targets.area)
        return preds.p_fg, targets.label

    results = _map_scenes(pairs_for, scenes)
    scores = np.concatenate([r[0] for r in results]) if results else np.zeros(0)
    labels = np.concatenate([r[1] for r in results]) if results else np.zeros(0)
    if len(scores) == 0:
        raise DataError("no generation-area voxels to evaluate")
    report = metrics.classifier_metrics(scores, labels, n_recall=cfg.eval.recall_thresholds)
    range_stats = metrics.points_per_object_by_range(scenes, cfg.eval.range_bins)

    doc = {
        "classifier": report.to_dict(),
        "points_per_object_by_range": range_stats.to_dict(),
        "num_scenes": len(scenes),
        "num_pairs": int(report.num_pairs),
        "ablation": list(ablations),
    }
    fileio.validate_report(doc)
    with open(args.report, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")

    print(
        metrics.format_table(
            ["metric", "value"],
            [
                ["accuracy", f"{report.accuracy:.4f}"],
                ["precision", f"{report.precision:.4f}"],
                ["recall", f"{report.recall:.4f}"],
                [f"ap@{report.n_recall}", f"{report.ap:.4f}"],
                ["pairs", report.num_pairs],
            ],
        )
    )
    rows = [
        [f"[{lo:g}, {hi:g})", count, "-" if mean is None else f"{mean:.1f}"]
        for (lo, hi), count, mean in zip(
            zip(range_stats.edges, range_stats.edges[1:]),
            range_stats.box_counts,
            range_stats.mean_points,
        )
    ]
    print()
    print(metrics.format_table(["range", "boxes", "mean points/box"], rows))
    print(f"report written to {args.report}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic scenes")
    p.add_argument("--config", default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--profile", choices=("dry", "rainy"), default="dry")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("make-targets", help="compile supervision target files")
    p.add_argument("--config", default=None)
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_make_targets)

    p = sub.add_parser("train", help="train the foreground-prediction network")
    p.add_argument("--config", default=None)
    p.add_argument("--scenes", required=True)
    p.add_argument("--checkpoint-out", required=True)
    p.add_argument("--log", default=None)
    p.add_argument("--resume", default=None)
    p.add_argument(
        "--parallel",
        action="store_true",
        help="merge per-scene gradients from SPG_THREADS workers (not bit-deterministic)",
    )
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("generate", help="emit an augmented cloud for one scene")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--export-ply", default=None)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("eval", help="evaluate foreground-voxel classification")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--ablate", default=None, help=f"comma-separated: {','.join(ABLATION_FLAGS)}")
    p.set_defaults(fn=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (InternalError, AssertionError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # anything unexpected is an internal failure
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry points wiring the modules into one workflow.

Subcommands: ``gen-data``, ``train``, ``evaluate``, ``baseline``,
``anchor-sweep``. Every command takes an optional ``--config FILE`` (JSON)
and any number of ``--<section.field> value`` overrides, echoes the resolved
configuration into the output directory, and exits 0 on success, 2 on
usage/config errors, 3 on runtime errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import baseline as mlr
from .checkpoint import load_checkpoint
from .config import RunConfig, config_hash, echo_config, load_run_config
from .errors import ConfigError, ForestRegError
from .metrics import emit_artifacts, pixel_metrics, stand_metrics
from .patches import augment, filter_and_split, load_dataset, mark_unlabeled, save_dataset
from .scenes import scene_to_patches
from .training import anchor_sweep, predict, train


def _parse_overrides(extras: list[str]) -> list[tuple[str, str]]:
    overrides = []
    i = 0
    while i < len(extras):
        token = extras[i]
        if not token.startswith("--") or i + 1 >= len(extras):
            raise ConfigError(f"expected --<section.field> value pairs, got {token!r}")
        overrides.append((token[2:], extras[i + 1]))
        i += 2
    return overrides


def _resolve_config(args: argparse.Namespace, extras: list[str]) -> RunConfig:
    overrides = _parse_overrides(extras)
    config = load_run_config(args.config, overrides)
    if getattr(args, "variant", None):
        config = dataclasses.replace(
            config, train=dataclasses.replace(config.train, variant=args.variant)
        )
    return config


def _print_report(label: str, report) -> None:
    print(
        f"{label}: rmse={report.rmse:.3f} m  rrmse={report.rrmse:.2f}%  "
        f"mae={report.mae:.3f} m  r2={report.r2:.3f}  ioa={report.ioa:.2f}%  n={report.n}"
    )


def cmd_gen_data(args: argparse.Namespace, extras: list[str]) -> int:
    config = _resolve_config(args, extras)
    out_dir = Path(args.out)
    echo_config(config, out_dir, invocation={"command": "gen-data", "out": str(out_dir)})

    patches = scene_to_patches(config.scene, patch_size=config.data.patch_size)
    split = filter_and_split(
        patches,
        forest_cover_min=config.data.forest_cover_min,
        fractions=(config.data.test_fraction, config.data.val_fraction),
        seed=config.data.seed,
    )
    split = mark_unlabeled(split, config.data.labeled_fraction, seed=config.data.seed)
    split.train = augment(
        split.train, seed=config.data.seed, multiplier=config.data.augment_multiplier
    )
    save_dataset(split, out_dir)
    n_labeled = sum(p.labeled for p in split.train)
    print(
        f"wrote {len(split.train)} train ({n_labeled} labeled), "
        f"{len(split.val)} val, {len(split.test)} test patches to {out_dir}"
    )
    return 0


def cmd_train(args: argparse.Namespace, extras: list[str]) -> int:
    config = _resolve_config(args, extras)
    out_dir = Path(args.out)
    train_config = dataclasses.replace(config.train, checkpoint_dir=str(out_dir))
    config = dataclasses.replace(config, train=train_config)
    echo_config(config, out_dir, invocation={
        "command": "train", "dataset": str(args.dataset), "out": str(out_dir),
        "config_hash": config_hash(config),
    })
    split = load_dataset(args.dataset)
    result = train(split, train_config)
    print(
        f"variant={train_config.variant} best_val_loss={result.best_val_loss:.6f} "
        f"epoch={result.best_epoch} checkpoint={result.checkpoint_path}"
    )
    return 0


def cmd_evaluate(args: argparse.Namespace, extras: list[str]) -> int:
    config = _resolve_config(args, extras)
    out_dir = Path(args.out)
    echo_config(config, out_dir, invocation={
        "command": "evaluate", "checkpoint": str(args.checkpoint),
        "dataset": str(args.dataset), "out": str(out_dir),
    })
    model, _ = load_checkpoint(args.checkpoint)
    split = load_dataset(args.dataset)
    patches = split.test or split.all_patches()
    maps = predict(model, patches, batch_size=config.train.batch_size)
    refs = [p.reference for p in patches]
    stands = [p.stand_ids for p in patches]
    masks = [p.forest_mask for p in patches]
    emit_artifacts(
        maps, refs, stands, masks, out_dir,
        names=[p.name for p in patches],
        pixel_size=patches[0].inputs.pixel_size,
    )
    _print_report("pixel", pixel_metrics(maps, refs, masks))
    _print_report("stand", stand_metrics(maps, refs, stands, masks))
    return 0


def cmd_baseline(args: argparse.Namespace, extras: list[str]) -> int:
    config = _resolve_config(args, extras)
    out_dir = Path(args.out)
    echo_config(config, out_dir, invocation={
        "command": "baseline", "dataset": str(args.dataset), "out": str(out_dir),
    })
    split = load_dataset(args.dataset)
    x, y = mlr.patches_to_pixels([p for p in split.train if p.labeled])
    model = mlr.fit_mlr(x, y, variance_kept=args.variance_kept)
    mlr.save_mlr(model, out_dir / "mlr_model.json")

    patches = split.test or split.all_patches()
    maps = []
    for patch in patches:
        bands = patch.inputs.values.reshape(patch.channels, -1).T.astype(np.float64)
        grid = mlr.predict_mlr(model, bands).reshape(patch.height, patch.width)
        grid = grid.astype(np.float32)
        grid[~patch.forest_mask] = np.nan
        maps.append(grid)
    refs = [p.reference for p in patches]
    stands = [p.stand_ids for p in patches]
    masks = [p.forest_mask for p in patches]
    summary = {
        "pixel": pixel_metrics(maps, refs, masks).to_dict(),
        "stand": stand_metrics(maps, refs, stands, masks).to_dict(),
        "k": model.k,
    }
    (out_dir / "metrics.json").write_text(json.dumps(summary, indent=2))
    _print_report("pixel", pixel_metrics(maps, refs, masks))
    _print_report("stand", stand_metrics(maps, refs, stands, masks))
    return 0


def cmd_anchor_sweep(args: argparse.Namespace, extras: list[str]) -> int:
    config = _resolve_config(args, extras)
    out_dir = Path(args.out)
    train_config = dataclasses.replace(config.train, checkpoint_dir=str(out_dir))
    echo_config(config, out_dir, invocation={
        "command": "anchor-sweep", "dataset": str(args.dataset), "out": str(out_dir),
        "counts": args.counts,
    })
    counts = [int(c) for c in args.counts.split(",") if c]
    if not counts:
        raise ConfigError("--counts must list at least one anchor count")
    split = load_dataset(args.dataset)
    rows = anchor_sweep(split, train_config, counts)
    (out_dir / "anchor_sweep.json").write_text(json.dumps(rows, indent=2))
    for row in rows:
        print(f"anchors={row['n_anchors']:5d}  val_loss={row['val_loss']:.6f}  "
              f"rrmse={row['rrmse']:.2f}%")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forestreg",
        description="Semisupervised contrastive dense regression for forest height mapping.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic BSR patch dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one ablation variant")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--variant", choices=("unet", "cpr", "ctrl", "hybrid"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", help="fit and evaluate the MLR baseline")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--variance-kept", type=float, default=0.99)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("anchor-sweep", help="train per anchor count and tabulate")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--counts", default="10,100,1000")
    p.add_argument("--variant", choices=("unet", "cpr", "ctrl", "hybrid"))
    p.set_defaults(func=cmd_anchor_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extras = parser.parse_known_args(argv)
    try:
        return args.func(args, extras)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ForestRegError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

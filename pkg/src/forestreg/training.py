"""Training loop: batching, anchor sampling, hybrid loss, Adam with a
one-cycle learning-rate schedule, checkpointing by validation loss.

Four ablation variants share the loop:

    unet    single branch, supervised MSE only, labeled patches only
    cpr     dual branch, adds cross-branch consistency, uses unlabeled data
    ctrl    single branch plus projector, adds the contrastive term
    hybrid  dual branch plus projector, the full objective

Weight decay lives inside the loss (the optimizer runs with decay 0), so the
scalar stepped on equals the logged total exactly. The validation loss is the
supervised MSE of the deployable branch, and the best checkpoint is the full
model at the epoch with the lowest validation loss.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .anchors import sample_anchors
from .checkpoint import save_checkpoint
from .errors import ConfigError, ContractError, DivergenceError, InsufficientAnchorsError
from .losses import CprTerms, LossConfig, LossReport, ctrl_loss, cpr_loss, hybrid_loss
from .network import Branch, DualBranchModel
from .patches import DatasetSplit, PatchSample
from .similarity import build_similarity

VARIANTS = ("unet", "cpr", "ctrl", "hybrid")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 4
    max_lr: float = 1e-2
    n_anchors: int = 1000
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    checkpoint_dir: str = "runs/default"
    variant: str = "hybrid"
    base_channels: int = 32
    pct_start: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.max_lr <= 0:
            raise ConfigError("max_lr must be > 0")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")

    @property
    def uses_projector(self) -> bool:
        return self.variant in ("ctrl", "hybrid")

    @property
    def uses_branch2(self) -> bool:
        return self.variant in ("cpr", "hybrid")

    @property
    def uses_unlabeled(self) -> bool:
        return self.uses_branch2


def one_cycle_lr(
    step: int,
    total_steps: int,
    max_lr: float,
    pct_start: float = 0.3,
    div_factor: float = 25.0,
    final_div_factor: float = 1e4,
) -> float:
    """Cosine warmup to ``max_lr`` then cosine decay; attains the peak exactly once."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if total_steps == 1:
        return max_lr
    start_lr = max_lr / div_factor
    final_lr = start_lr / final_div_factor
    peak = int(round(pct_start * (total_steps - 1)))
    peak = min(max(peak, 0), total_steps - 1)
    if step <= peak:
        frac = step / peak if peak > 0 else 1.0
        return start_lr + (max_lr - start_lr) * 0.5 * (1.0 - math.cos(math.pi * frac))
    frac = (step - peak) / (total_steps - 1 - peak)
    return final_lr + (max_lr - final_lr) * 0.5 * (1.0 + math.cos(math.pi * frac))


@dataclass
class TrainResult:
    model: DualBranchModel
    best_val_loss: float
    best_epoch: int
    checkpoint_path: Path
    log: list[dict]
    log_path: Path


def _patch_tensors(patches: Sequence[PatchSample]) -> dict:
    """Stack patch layers once; reused every epoch."""
    inputs = torch.from_numpy(np.stack([p.inputs.values for p in patches]).astype(np.float32))
    reference = torch.from_numpy(np.stack([p.reference for p in patches]).astype(np.float32))
    forest = torch.from_numpy(np.stack([p.forest_mask for p in patches]))
    labeled = torch.tensor([p.labeled for p in patches], dtype=torch.bool)
    return {"inputs": inputs, "reference": reference, "forest": forest, "labeled": labeled}


def _supervised_mse(branch: Branch, patches: Sequence[PatchSample], batch_size: int) -> float:
    """MSE of one branch over the supervised pixels of the given patches."""
    branch.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(patches), batch_size):
            chunk = patches[start : start + batch_size]
            x = torch.from_numpy(np.stack([p.inputs.values for p in chunk]).astype(np.float32))
            pred = branch(x).prediction[:, 0]
            for i, patch in enumerate(chunk):
                mask = torch.from_numpy(patch.supervision_mask())
                if not bool(mask.any()):
                    continue
                ref = torch.from_numpy(np.nan_to_num(patch.reference, nan=0.0))
                diff = (pred[i] - ref)[mask]
                total += float((diff * diff).sum())
                count += int(mask.sum())
    branch.train()
    if count == 0:
        raise ContractError("no supervised pixels in validation patches")
    return total / count


def _step_losses(
    model: DualBranchModel,
    batch: Sequence[PatchSample],
    tensors: dict,
    idx: np.ndarray,
    config: TrainConfig,
    anchor_seed: int,
) -> tuple[torch.Tensor, LossReport]:
    x = tensors["inputs"][idx]
    reference = tensors["reference"][idx]
    forest = tensors["forest"][idx]
    labeled = tensors["labeled"][idx][:, None, None].expand(-1, x.shape[2], x.shape[3])

    out1, out2 = model(x)
    p1 = out1.prediction[:, 0]
    if out2 is not None:
        p2 = out2.prediction[:, 0]
        cpr = cpr_loss(p1, p2, reference, labeled, forest, config.loss)
    else:
        l1 = cpr_loss(p1, p1, reference, labeled, forest, config.loss).l1
        zero = torch.zeros((), dtype=p1.dtype)
        cpr = CprTerms(l1=l1, l2=zero, l_c=zero, n_supervised=0)

    ctrl_term: torch.Tensor | float = 0.0
    n_anchors_used = 0
    if out1.embedding is not None and config.loss.lambda_ctrl > 0:
        try:
            anchors = sample_anchors(batch, out1.embedding, config.n_anchors, seed=anchor_seed)
        except InsufficientAnchorsError:
            anchors = None
        if anchors is not None:
            sim = build_similarity(anchors, sigma=config.loss.sigma, eps=config.loss.eps_sim)
            ctrl_term = ctrl_loss(sim, config.loss)
            n_anchors_used = anchors.n

    return hybrid_loss(cpr, ctrl_term, list(model.parameters()), config.loss,
                       n_anchors_used=n_anchors_used)


def train(split: DatasetSplit, config: TrainConfig) -> TrainResult:
    """Optimize the selected variant and keep the checkpoint with the best
    validation loss. Deterministic per (split, config)."""
    train_patches = list(split.train)
    if not config.uses_unlabeled:
        train_patches = [p for p in train_patches if p.labeled]
    if not any(p.labeled for p in train_patches):
        raise ConfigError("training requires at least one labeled patch")
    if not split.val:
        raise ConfigError("training requires a validation set")

    in_channels = train_patches[0].channels
    model = DualBranchModel(
        in_channels=in_channels,
        with_projector=config.uses_projector,
        with_branch2=config.uses_branch2,
        base_channels=config.base_channels,
        seed=config.seed,
    )
    tensors = _patch_tensors(train_patches)
    mean = tensors["inputs"].mean(dim=(0, 2, 3))
    std = tensors["inputs"].std(dim=(0, 2, 3))
    model.set_input_stats(mean, std)
    model.train()
    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)

    optimizer = torch.optim.Adam(model.parameters(), lr=config.max_lr, weight_decay=0.0)
    batches_per_epoch = math.ceil(len(train_patches) / config.batch_size)
    total_steps = config.epochs * batches_per_epoch

    out_dir = Path(config.checkpoint_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train_log.jsonl"
    checkpoint_path = out_dir / "best.ckpt"
    log: list[dict] = []
    best_val = float("inf")
    best_epoch = -1
    global_step = 0

    with open(log_path, "w") as log_fh:
        for epoch in range(config.epochs):
            order = rng.permutation(len(train_patches))
            for start in range(0, len(train_patches), config.batch_size):
                idx = order[start : start + config.batch_size]
                batch = [train_patches[i] for i in idx]
                lr = one_cycle_lr(
                    global_step, total_steps, config.max_lr,
                    pct_start=config.pct_start,
                    div_factor=config.div_factor,
                    final_div_factor=config.final_div_factor,
                )
                for group in optimizer.param_groups:
                    group["lr"] = lr
                anchor_seed = int(rng.integers(0, 2**31 - 1))
                total, report = _step_losses(model, batch, tensors, idx, config, anchor_seed)
                if not math.isfinite(report.total):
                    dump = {
                        "epoch": epoch,
                        "step": global_step,
                        "lr": lr,
                        "patches": [p.name for p in batch],
                        "report": report.to_dict(),
                    }
                    dump_path = out_dir / "divergence_dump.json"
                    dump_path.write_text(json.dumps(dump, indent=2))
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch} step {global_step}; "
                        f"diagnostics in {dump_path}"
                    )
                optimizer.zero_grad()
                total.backward()
                optimizer.step()

                record = {"epoch": epoch, "step": global_step, "lr": lr}
                record.update(_report_fields(report))
                log.append(record)
                log_fh.write(json.dumps(record) + "\n")
                global_step += 1

            val_loss = _supervised_mse(model.deployable_branch(), split.val, config.batch_size)
            record = {"epoch": epoch, "val_loss": val_loss}
            log.append(record)
            log_fh.write(json.dumps(record) + "\n")
            if val_loss < best_val:
                best_val = val_loss
                best_epoch = epoch
                save_checkpoint(checkpoint_path, model, epoch=epoch, val_loss=val_loss)

    return TrainResult(
        model=model,
        best_val_loss=best_val,
        best_epoch=best_epoch,
        checkpoint_path=checkpoint_path,
        log=log,
        log_path=log_path,
    )


def _report_fields(report: LossReport) -> dict:
    return {
        "l1": report.l1_labeled,
        "l2": report.l2_labeled,
        "l_c": report.l_consistency,
        "l_ctrl": report.l_ctrl,
        "l_wd": report.l_wd,
        "total": report.total,
        "n_anchors": report.n_anchors_used,
    }


def predict(
    model: Branch | DualBranchModel,
    patches: Sequence[PatchSample],
    batch_size: int = 4,
) -> list[np.ndarray]:
    """Per-patch prediction maps in meters; non-forest pixels are NaN."""
    branch = model.deployable_branch() if isinstance(model, DualBranchModel) else model
    was_training = branch.training
    branch.eval()
    maps: list[np.ndarray] = []
    with torch.no_grad():
        for start in range(0, len(patches), batch_size):
            chunk = patches[start : start + batch_size]
            x = torch.from_numpy(np.stack([p.inputs.values for p in chunk]).astype(np.float32))
            if x.shape[1] != branch.in_channels:
                raise ContractError(
                    f"patches have {x.shape[1]} channels, model expects {branch.in_channels}"
                )
            pred = branch(x).prediction[:, 0].numpy()
            for i, patch in enumerate(chunk):
                grid = pred[i].astype(np.float32).copy()
                grid[~patch.forest_mask] = np.nan
                maps.append(grid)
    if was_training:
        branch.train()
    return maps


def anchor_sweep(
    split: DatasetSplit,
    config: TrainConfig,
    anchor_counts: Sequence[int],
) -> list[dict]:
    """Train one model per anchor count; report validation loss and pixel rRMSE."""
    from .metrics import pixel_metrics

    from .checkpoint import load_checkpoint

    rows = []
    for count in anchor_counts:
        if count < 2:
            raise ConfigError(f"anchor count {count} must be >= 2")
        run_config = replace(
            config,
            n_anchors=count,
            checkpoint_dir=str(Path(config.checkpoint_dir) / f"anchors{count}"),
        )
        result = train(split, run_config)
        best_model, _ = load_checkpoint(result.checkpoint_path)
        maps = predict(best_model, split.val, batch_size=config.batch_size)
        report = pixel_metrics(
            maps,
            [p.reference for p in split.val],
            [p.forest_mask for p in split.val],
        )
        rows.append({
            "n_anchors": count,
            "val_loss": result.best_val_loss,
            "rrmse": report.rrmse,
        })
    return rows

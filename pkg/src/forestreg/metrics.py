"""Accuracy metrics at pixel and stand level, plus evaluation artifacts.

Conventions (the literature leaves them implicit): relative RMSE divides by
the mean reference over the evaluated set, in percent; the agreement index
is Willmott's, reported in percent. Stand-level metrics first average
prediction and reference per stand over valid pixels, then apply the
pixel-level formulas to the stand means.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .bsr import RasterStack, write_raster
from .errors import ContractError, InsufficientStandsError, UndefinedMetricError


@dataclass
class MetricReport:
    rmse: float
    rrmse: float
    mae: float
    r2: float
    ioa: float
    n: int
    level: str

    def to_dict(self) -> dict:
        return asdict(self)


def rmse(pred: np.ndarray, ref: np.ndarray) -> float:
    err = np.asarray(pred, np.float64) - np.asarray(ref, np.float64)
    return float(np.sqrt(np.mean(err * err)))


def mae(pred: np.ndarray, ref: np.ndarray) -> float:
    err = np.asarray(pred, np.float64) - np.asarray(ref, np.float64)
    return float(np.mean(np.abs(err)))


def rrmse(pred: np.ndarray, ref: np.ndarray) -> float:
    """RMSE over mean reference, in percent."""
    ref_mean = float(np.mean(np.asarray(ref, np.float64)))
    if ref_mean == 0.0:
        raise UndefinedMetricError("mean reference is zero; relative RMSE undefined")
    return 100.0 * rmse(pred, ref) / ref_mean


def r2(pred: np.ndarray, ref: np.ndarray) -> float:
    pred = np.asarray(pred, np.float64)
    ref = np.asarray(ref, np.float64)
    ss_tot = float(np.sum((ref - ref.mean()) ** 2))
    if ss_tot == 0.0:
        raise UndefinedMetricError("constant reference; coefficient of determination undefined")
    sse = float(np.sum((pred - ref) ** 2))
    return 1.0 - sse / ss_tot


def ioa(pred: np.ndarray, ref: np.ndarray) -> float:
    """Willmott's index of agreement, in percent."""
    pred = np.asarray(pred, np.float64)
    ref = np.asarray(ref, np.float64)
    ref_mean = ref.mean()
    den = float(np.sum((np.abs(pred - ref_mean) + np.abs(ref - ref_mean)) ** 2))
    if den == 0.0:
        raise UndefinedMetricError("degenerate agreement denominator")
    sse = float(np.sum((pred - ref) ** 2))
    return 100.0 * (1.0 - sse / den)


def _compute_metrics(pred: np.ndarray, ref: np.ndarray, level: str) -> MetricReport:
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    n = pred.size
    if n < 2:
        raise UndefinedMetricError(f"need >= 2 valid samples, got {n}")
    return MetricReport(
        rmse=rmse(pred, ref),
        rrmse=rrmse(pred, ref),
        mae=mae(pred, ref),
        r2=r2(pred, ref),
        ioa=ioa(pred, ref),
        n=n,
        level=level,
    )


def _collect_valid(
    preds: Sequence[np.ndarray],
    refs: Sequence[np.ndarray],
    forest_masks: Sequence[np.ndarray],
) -> tuple[np.ndarray, np.ndarray]:
    if not (len(preds) == len(refs) == len(forest_masks)):
        raise ContractError("preds, refs, forest_masks must have equal length")
    p_all, r_all = [], []
    for p, r, m in zip(preds, refs, forest_masks):
        p = np.asarray(p, dtype=np.float64)
        r = np.asarray(r, dtype=np.float64)
        if p.shape != r.shape or p.shape != m.shape:
            raise ContractError(f"map shapes differ: {p.shape}, {r.shape}, {m.shape}")
        valid = m & np.isfinite(r) & np.isfinite(p)
        p_all.append(p[valid])
        r_all.append(r[valid])
    return np.concatenate(p_all), np.concatenate(r_all)


def pixel_metrics(
    preds: Sequence[np.ndarray],
    refs: Sequence[np.ndarray],
    forest_masks: Sequence[np.ndarray],
) -> MetricReport:
    """Metrics over all valid pixels (forest, defined reference and prediction)."""
    p, r = _collect_valid(preds, refs, forest_masks)
    return _compute_metrics(p, r, level="pixel")


def stand_means(
    preds: Sequence[np.ndarray],
    refs: Sequence[np.ndarray],
    stand_ids: Sequence[np.ndarray],
    forest_masks: Sequence[np.ndarray],
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-stand means of prediction and reference over valid pixels.

    Returns (ids, pred_means, ref_means, pixel_counts), stands sorted by id.
    Stand id 0 (no stand) and stands without valid pixels are dropped.
    """
    if not (len(preds) == len(refs) == len(stand_ids) == len(forest_masks)):
        raise ContractError("all map sequences must have equal length")
    ids_all, p_all, r_all = [], [], []
    for p, r, s, m in zip(preds, refs, stand_ids, forest_masks):
        p = np.asarray(p, dtype=np.float64)
        r = np.asarray(r, dtype=np.float64)
        s = np.asarray(s)
        valid = m & np.isfinite(r) & np.isfinite(p) & (s > 0)
        ids_all.append(s[valid])
        p_all.append(p[valid])
        r_all.append(r[valid])
    ids = np.concatenate(ids_all)
    if ids.size == 0:
        raise InsufficientStandsError("no valid stand pixels")
    p = np.concatenate(p_all)
    r = np.concatenate(r_all)
    uniq, inverse = np.unique(ids, return_inverse=True)
    counts = np.bincount(inverse)
    p_means = np.bincount(inverse, weights=p) / counts
    r_means = np.bincount(inverse, weights=r) / counts
    return uniq, p_means, r_means, counts


def stand_metrics(
    preds: Sequence[np.ndarray],
    refs: Sequence[np.ndarray],
    stand_ids: Sequence[np.ndarray],
    forest_masks: Sequence[np.ndarray],
) -> MetricReport:
    """Pixel-level formulas applied to the per-stand mean pairs."""
    uniq, p_means, r_means, _ = stand_means(preds, refs, stand_ids, forest_masks)
    if uniq.size < 2:
        raise InsufficientStandsError(f"need >= 2 stands with valid pixels, got {uniq.size}")
    report = _compute_metrics(p_means, r_means, level="stand")
    return report


def emit_artifacts(
    preds: Sequence[np.ndarray],
    refs: Sequence[np.ndarray],
    stand_ids: Sequence[np.ndarray],
    forest_masks: Sequence[np.ndarray],
    out_dir: str | Path,
    names: Sequence[str] | None = None,
    pixel_size: float = 20.0,
    nodata: float = -9999.0,
) -> dict:
    """Write scatter CSV, per-patch prediction maps, and a metrics summary.

    Returns the written paths. The metrics JSON carries exactly the values
    of ``pixel_metrics`` / ``stand_metrics`` on the same inputs.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if names is None:
        names = [f"patch{i:04d}" for i in range(len(preds))]

    uniq, p_means, r_means, counts = stand_means(preds, refs, stand_ids, forest_masks)
    csv_path = out_dir / "stand_scatter.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stand_id", "pred_mean_m", "ref_mean_m", "n_pixels"])
        for sid, pm, rm, cnt in zip(uniq, p_means, r_means, counts):
            writer.writerow([int(sid), repr(float(pm)), repr(float(rm)), int(cnt)])

    map_paths = []
    for name, pred, mask in zip(names, preds, forest_masks):
        grid = np.asarray(pred, dtype=np.float32).copy()
        grid[~(mask & np.isfinite(grid))] = nodata
        path = out_dir / f"{name}_pred.bsr"
        write_raster(RasterStack(grid[None], nodata=nodata, pixel_size=pixel_size), path)
        map_paths.append(path)

    summary = {
        "pixel": pixel_metrics(preds, refs, forest_masks).to_dict(),
        "stand": stand_metrics(preds, refs, stand_ids, forest_masks).to_dict(),
    }
    json_path = out_dir / "metrics.json"
    json_path.write_text(json.dumps(summary, indent=2))
    return {"scatter_csv": csv_path, "metrics_json": json_path, "prediction_maps": map_paths}

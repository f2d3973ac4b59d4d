"""Pixel-level multiple linear regression baseline with PCA preprocessing.

The baseline ignores spatial context: every labeled forest pixel of the
training patches is one sample with its band vector as features. Features
are centered, projected onto the principal components retaining the
requested variance fraction, and fitted by least squares with an intercept.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError
from .patches import PatchSample


@dataclass
class MlrModel:
    mean: np.ndarray          # (C,)
    components: np.ndarray    # (K, C), orthonormal rows
    coefficients: np.ndarray  # (K,)
    intercept: float

    @property
    def k(self) -> int:
        return self.components.shape[0]


def fit_mlr(
    pixels: np.ndarray,
    heights: np.ndarray,
    variance_kept: float = 0.99,
) -> MlrModel:
    """PCA-reduce the band vectors, then least-squares fit of the heights.

    Keeps the smallest number of leading components whose cumulative
    explained variance reaches ``variance_kept``.
    """
    x = np.asarray(pixels, dtype=np.float64)
    y = np.asarray(heights, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ContractError(f"pixels (M, C) and heights (M,) expected, got {x.shape}, {y.shape}")
    m, c = x.shape
    if m <= c:
        raise ContractError(f"need more samples ({m}) than features ({c})")
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(x)):
        raise ContractError("pixels and heights must be finite")
    if not 0.0 < variance_kept <= 1.0:
        raise ValueError(f"variance_kept {variance_kept} outside (0, 1]")

    mean = x.mean(axis=0)
    centered = x - mean
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    var = svals**2
    rank = int(np.sum(svals > svals[0] * max(m, c) * np.finfo(np.float64).eps)) if svals.size else 0
    if rank == 0:
        raise ContractError("feature matrix has zero rank after centering")
    explained = np.cumsum(var[:rank]) / var[:rank].sum()
    k = int(np.searchsorted(explained, variance_kept - 1e-12) + 1)
    k = min(k, rank)
    components = vt[:k]

    scores = centered @ components.T
    design = np.hstack([scores, np.ones((m, 1))])
    solution, _, design_rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if design_rank < k + 1:
        raise ContractError(f"rank-deficient score matrix (rank {design_rank} < {k + 1})")
    return MlrModel(
        mean=mean,
        components=components,
        coefficients=solution[:k],
        intercept=float(solution[k]),
    )


def predict_mlr(model: MlrModel, pixels: np.ndarray) -> np.ndarray:
    x = np.asarray(pixels, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.mean.shape[0]:
        raise ContractError(
            f"pixels must be (M, {model.mean.shape[0]}), got {x.shape}"
        )
    scores = (x - model.mean) @ model.components.T
    return scores @ model.coefficients + model.intercept


def patches_to_pixels(patches: Sequence[PatchSample]) -> tuple[np.ndarray, np.ndarray]:
    """Pool supervised pixels of the patches: (M, C) band vectors, (M,) heights."""
    xs, ys = [], []
    for patch in patches:
        mask = patch.supervision_mask()
        if not mask.any():
            continue
        bands = patch.inputs.values[:, mask].T  # (n, C)
        xs.append(bands.astype(np.float64))
        ys.append(patch.reference[mask].astype(np.float64))
    if not xs:
        raise ContractError("no supervised pixels in the given patches")
    return np.concatenate(xs), np.concatenate(ys)


def save_mlr(model: MlrModel, path: str | Path) -> None:
    payload = {
        "mean": model.mean.tolist(),
        "components": model.components.tolist(),
        "coefficients": model.coefficients.tolist(),
        "intercept": model.intercept,
    }
    Path(path).write_text(json.dumps(payload))


def load_mlr(path: str | Path) -> MlrModel:
    payload = json.loads(Path(path).read_text())
    return MlrModel(
        mean=np.asarray(payload["mean"], dtype=np.float64),
        components=np.asarray(payload["components"], dtype=np.float64),
        coefficients=np.asarray(payload["coefficients"], dtype=np.float64),
        intercept=float(payload["intercept"]),
    )

"""Anchor sampling: random labeled forest pixels whose mutual pairs are negatives.

An anchor is a pixel with a defined reference height inside a labeled patch's
forest mask. Each batch contributes one pooled population; anchors are drawn
uniformly without replacement across all patches of the batch. Every other
anchor in the set is a negative; there is no separate positive-pair structure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ContractError, InsufficientAnchorsError
from .patches import PatchSample


@dataclass
class AnchorSet:
    """N sampled pixel positions with reference heights and unit embeddings.

    ``positions`` is (N, 3) int64 rows of (patch index, row, col).
    ``embeddings`` is (N, D) with L2-normalized rows and carries the autograd
    graph of the embedding field it was gathered from.
    """

    positions: np.ndarray
    heights: np.ndarray
    embeddings: torch.Tensor
    n_requested: int

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def shortfall(self) -> bool:
        return self.n < self.n_requested


def eligible_pixel_mask(batch: Sequence[PatchSample]) -> np.ndarray:
    """(B, H, W) mask of pixels usable as anchors: labeled, forest, reference defined."""
    return np.stack([p.supervision_mask() for p in batch])


def sample_anchors(
    batch: Sequence[PatchSample],
    embedding_fields: torch.Tensor,
    n_anchors: int,
    seed: int,
) -> AnchorSet:
    """Uniform sample without replacement over eligible pixels of the batch.

    ``embedding_fields`` is (B, D, H, W), the projector output for the batch.
    If fewer eligible pixels than ``n_anchors`` exist, all of them are
    returned and the set reports the shortfall. Deterministic per seed.
    """
    if embedding_fields.ndim != 4 or embedding_fields.shape[0] != len(batch):
        raise ContractError(
            f"embedding_fields must be (B, D, H, W) with B={len(batch)}, "
            f"got shape {tuple(embedding_fields.shape)}"
        )
    mask = eligible_pixel_mask(batch)
    if mask.shape[1:] != tuple(embedding_fields.shape[2:]):
        raise ContractError(
            f"patch grid {mask.shape[1:]} != embedding grid {tuple(embedding_fields.shape[2:])}"
        )
    flat_idx = np.flatnonzero(mask)
    if flat_idx.size < 2:
        raise InsufficientAnchorsError(
            f"batch has {flat_idx.size} eligible anchor pixels, need >= 2"
        )
    rng = np.random.default_rng(seed)
    n_take = min(n_anchors, flat_idx.size)
    chosen = rng.choice(flat_idx, size=n_take, replace=False)
    b, r, c = np.unravel_index(chosen, mask.shape)
    positions = np.stack([b, r, c], axis=1).astype(np.int64)

    heights = np.stack([batch[bi].reference[ri, ci] for bi, ri, ci in positions]).astype(
        np.float32
    )
    gathered = embedding_fields[positions[:, 0], :, positions[:, 1], positions[:, 2]]
    embeddings = F.normalize(gathered, dim=1)
    return AnchorSet(
        positions=positions,
        heights=heights,
        embeddings=embeddings,
        n_requested=n_anchors,
    )

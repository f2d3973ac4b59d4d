"""Label-distribution similarity and pairwise cosine similarity over anchors.

Label similarity between two pixels with reference heights mu_i, mu_k models
each label as a Gaussian with shared measurement error sigma and scores the
pair by the negative log KL divergence, which for equal variances reduces to

    s(mu_i, mu_k) = -log( max((mu_i - mu_k)^2, eps) / (2 sigma^2) ).

The squared difference is clamped at ``eps`` so identical labels give a
large finite similarity instead of a singularity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import DegenerateEmbeddingError, InsufficientAnchorsError


def label_similarity(mu_i: float, mu_k: float, sigma: float, eps: float = 1e-6) -> float:
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    return -math.log(max((mu_i - mu_k) ** 2, eps) / (2.0 * sigma * sigma))


def pairwise_label_similarity(
    heights: torch.Tensor, sigma: float, eps: float = 1e-6
) -> torch.Tensor:
    """Vectorized ``label_similarity`` over all height pairs; (N, N) tensor."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    mu = heights.reshape(-1, 1)
    d2 = (mu - mu.T) ** 2
    return -torch.log(torch.clamp(d2, min=eps) / (2.0 * sigma * sigma))


def cosine_matrix(embeddings: torch.Tensor) -> torch.Tensor:
    """Pairwise cosine similarities of the rows; symmetric with unit diagonal."""
    if embeddings.ndim != 2:
        raise ValueError(f"embeddings must be (N, D), got shape {tuple(embeddings.shape)}")
    norms = torch.linalg.vector_norm(embeddings, dim=1)
    if torch.any(norms == 0):
        raise DegenerateEmbeddingError("embedding row with zero norm")
    unit = embeddings / norms[:, None]
    c = unit @ unit.T
    c = 0.5 * (c + c.T)
    c = c - torch.diag_embed(torch.diagonal(c) - 1.0)
    return c


@dataclass
class SimilarityMatrix:
    """Paired (N, N) label similarities ``s`` and cosine similarities ``c``.

    The diagonal never participates in any loss sum.
    """

    s: torch.Tensor
    c: torch.Tensor
    diagonal_excluded: bool = True

    @property
    def n(self) -> int:
        return self.s.shape[0]

    def offdiagonal_mask(self) -> torch.Tensor:
        return ~torch.eye(self.n, dtype=torch.bool, device=self.s.device)


def build_similarity(anchors, sigma: float, eps: float = 1e-6) -> SimilarityMatrix:
    """Similarity matrices for an anchor set: label kernel rows vs cosine rows.

    ``s`` carries no gradient (labels are data); ``c`` keeps the autograd
    graph of the anchor embeddings.
    """
    embeddings = anchors.embeddings
    if embeddings.shape[0] < 2:
        raise InsufficientAnchorsError(f"need >= 2 anchors, got {embeddings.shape[0]}")
    heights = torch.as_tensor(anchors.heights, dtype=embeddings.dtype, device=embeddings.device)
    with torch.no_grad():
        s = pairwise_label_similarity(heights, sigma=sigma, eps=eps)
    c = cosine_matrix(embeddings)
    return SimilarityMatrix(s=s, c=c)

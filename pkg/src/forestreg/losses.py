"""The three training objectives: contrastive regression, cross-pseudo
regression, and the hybrid semisupervised combination.

Contrastive regression scores each anchor i against all other anchors:

    L_i = -log[ (sum_{k!=i} relu(s_ik) * exp(c_ik / tau) + eps_log)
              / (sum_{j!=i} |s_ij|    * exp(c_ij / tau) + eps_log) ]

and the batch loss is the mean over anchors. The relu discards negative
label similarities in the numerator; the absolute value in the denominator
normalizes, so relu(s) <= |s| entrywise keeps every L_i >= 0. ``eps_log``
guards the log when every similarity in a row is non-positive.

Cross-pseudo regression combines supervised MSE of each branch on labeled
forest pixels with an MSE consistency term between the two branches over all
forest pixels, labeled or not.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Iterable, NamedTuple

import torch
import torch.nn.functional as F

from .errors import ContractError, InsufficientAnchorsError
from .similarity import SimilarityMatrix


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.5
    sigma: float = 1.0
    eps_sim: float = 1e-6
    eps_log: float = 1e-8
    lambda_c: float = 1.0
    lambda_ctrl: float = 60.0
    lambda_w: float = 1e-4
    stop_gradient_consistency: bool = False

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.eps_sim <= 0 or self.eps_log <= 0:
            raise ValueError("eps_sim and eps_log must be > 0")
        if min(self.lambda_c, self.lambda_ctrl, self.lambda_w) < 0:
            raise ValueError("loss weights must be >= 0")


@dataclass
class LossReport:
    """Scalar loss components of one training step, as logged per step."""

    l1_labeled: float
    l2_labeled: float
    l_consistency: float
    l_ctrl: float
    l_wd: float
    total: float
    n_anchors_used: int

    def to_dict(self) -> dict:
        return asdict(self)


def ctrl_loss_per_anchor(sim: SimilarityMatrix, config: LossConfig) -> torch.Tensor:
    """Per-anchor contrastive regression terms, shape (N,)."""
    n = sim.n
    if n < 2:
        raise InsufficientAnchorsError(f"need >= 2 anchors, got {n}")
    off = sim.offdiagonal_mask().to(sim.c.dtype)
    w = torch.exp(sim.c / config.tau) * off
    numer = (torch.relu(sim.s) * w).sum(dim=1) + config.eps_log
    denom = (torch.abs(sim.s) * w).sum(dim=1) + config.eps_log
    return torch.log(denom) - torch.log(numer)


def ctrl_loss(sim: SimilarityMatrix, config: LossConfig) -> torch.Tensor:
    """Contrastive regression loss averaged over the N anchors."""
    return ctrl_loss_per_anchor(sim, config).mean()


class CprTerms(NamedTuple):
    l1: torch.Tensor
    l2: torch.Tensor
    l_c: torch.Tensor
    n_supervised: int


def _masked_mse(a: torch.Tensor, b: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    # torch.where keeps NaN at excluded pixels from contaminating the sum
    diff = torch.where(mask, a - b, torch.zeros((), dtype=a.dtype, device=a.device))
    return (diff * diff).sum() / mask.sum().clamp(min=1).to(a.dtype)


def cpr_loss(
    p1: torch.Tensor,
    p2: torch.Tensor,
    reference: torch.Tensor,
    labeled_mask: torch.Tensor,
    forest_mask: torch.Tensor,
    config: LossConfig,
) -> CprTerms:
    """Supervised MSE of each branch plus the cross-branch consistency MSE.

    All maps are (B, H, W). ``labeled_mask`` flags labeled pixels (a labeled
    patch contributes its whole grid). Supervised terms run over labeled
    forest pixels with a defined (finite) reference; the consistency term
    runs over all forest pixels. A batch with zero supervised pixels yields
    l1 = l2 = 0 (n_supervised reports it).
    """
    if not (p1.shape == p2.shape == reference.shape == labeled_mask.shape == forest_mask.shape):
        raise ContractError(
            f"shape mismatch: p1 {tuple(p1.shape)}, p2 {tuple(p2.shape)}, "
            f"reference {tuple(reference.shape)}, labeled {tuple(labeled_mask.shape)}, "
            f"forest {tuple(forest_mask.shape)}"
        )
    sup = labeled_mask & forest_mask & torch.isfinite(reference)
    n_sup = int(sup.sum().item())
    ref = torch.nan_to_num(reference, nan=0.0)
    l1 = _masked_mse(p1, ref, sup)
    l2 = _masked_mse(p2, ref, sup)
    p2_c = p2.detach() if config.stop_gradient_consistency else p2
    l_c = _masked_mse(p1, p2_c, forest_mask)
    return CprTerms(l1=l1, l2=l2, l_c=l_c, n_supervised=n_sup)


def weight_decay_term(weights: Iterable[torch.Tensor]) -> torch.Tensor:
    """Mean of squared entries over all parameter tensors."""
    weights = list(weights)
    if not weights:
        raise ValueError("weights must be non-empty")
    total = sum(w.pow(2).sum() for w in weights)
    n_w = sum(w.numel() for w in weights)
    return total / n_w


def hybrid_loss(
    cpr: CprTerms,
    ctrl: torch.Tensor | float,
    weights: Iterable[torch.Tensor],
    config: LossConfig,
    n_anchors_used: int = 0,
) -> tuple[torch.Tensor, LossReport]:
    """Combined semisupervised objective and its per-component report.

    total = l1 + l2 + lambda_c * l_c + lambda_ctrl * ctrl
          + lambda_w * mean(w_j^2)

    Returns the differentiable scalar (the exact quantity the optimizer
    steps on) plus a float report of every component.
    """
    ctrl_t = torch.as_tensor(ctrl, dtype=cpr.l1.dtype, device=cpr.l1.device)
    l_wd = weight_decay_term(weights)
    total = (
        cpr.l1
        + cpr.l2
        + config.lambda_c * cpr.l_c
        + config.lambda_ctrl * ctrl_t
        + config.lambda_w * l_wd
    )
    report = LossReport(
        l1_labeled=float(cpr.l1.detach()),
        l2_labeled=float(cpr.l2.detach()),
        l_consistency=float(cpr.l_c.detach()),
        l_ctrl=float(ctrl_t.detach()),
        l_wd=float(l_wd.detach()),
        total=float(total.detach()),
        n_anchors_used=n_anchors_used,
    )
    return total, report

"""Dual-branch dense regression architecture.

Each branch is a three-level UNet backbone (channel plan 32-64-128 down,
mirrored up, 128 feature channels at input resolution) with a pixel-wise
predictor head; branch 1 additionally carries a projector head producing the
128-channel embedding field. Normalization is GroupNorm with 4 groups
throughout; upsampling is a stride-2, kernel-2 transposed convolution so
kernels do not overlap and no checkerboard pattern can form.
"""

from __future__ import annotations

import copy
import math
from typing import NamedTuple, Optional

import torch
from torch import nn

from .errors import ContractError

EMBED_CHANNELS = 128
NORM_GROUPS = 4


class BranchOutputs(NamedTuple):
    prediction: torch.Tensor          # (B, 1, H, W) meters
    embedding: Optional[torch.Tensor]  # (B, 128, H, W) or None


def conv_unit(in_channels: int, out_channels: int, activation: bool = True) -> nn.Sequential:
    """Conv 3x3 + GroupNorm(4) (+ ReLU). ``out_channels`` must divide by 4."""
    if out_channels % NORM_GROUPS != 0:
        raise ContractError(f"out_channels {out_channels} not divisible by {NORM_GROUPS}")
    layers: list[nn.Module] = [
        nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1),
        nn.GroupNorm(NORM_GROUPS, out_channels),
    ]
    if activation:
        layers.append(nn.ReLU(inplace=True))
    return nn.Sequential(*layers)


class UNetBackbone(nn.Module):
    """Three-level encoder/decoder with skip connections; 128-channel output."""

    def __init__(self, in_channels: int, base_channels: int = 32):
        super().__init__()
        b = base_channels
        self.enc1 = nn.Sequential(conv_unit(in_channels, b), conv_unit(b, b))
        self.enc2 = nn.Sequential(conv_unit(b, 2 * b), conv_unit(2 * b, 2 * b))
        self.mid = nn.Sequential(conv_unit(2 * b, 4 * b), conv_unit(4 * b, 4 * b))
        self.pool = nn.MaxPool2d(2)
        self.up2 = nn.ConvTranspose2d(4 * b, 2 * b, kernel_size=2, stride=2)
        self.dec2 = nn.Sequential(conv_unit(4 * b, 2 * b), conv_unit(2 * b, 2 * b))
        self.up1 = nn.ConvTranspose2d(2 * b, b, kernel_size=2, stride=2)
        self.dec1 = nn.Sequential(conv_unit(2 * b, b), conv_unit(b, EMBED_CHANNELS))
        self.in_channels = in_channels
        self.base_channels = base_channels
        # fixed per-channel input standardization, set from training data and
        # carried in the state dict so checkpoints are self-contained
        self.register_buffer("input_mean", torch.zeros(1, in_channels, 1, 1))
        self.register_buffer("input_std", torch.ones(1, in_channels, 1, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4:
            raise ContractError(f"input must be (B, C, H, W), got shape {tuple(x.shape)}")
        if x.shape[1] != self.in_channels:
            raise ContractError(f"expected {self.in_channels} channels, got {x.shape[1]}")
        if x.shape[2] % 4 != 0 or x.shape[3] % 4 != 0:
            raise ContractError(
                f"spatial dims {tuple(x.shape[2:])} must be divisible by 4"
            )
        x = (x - self.input_mean) / self.input_std
        e1 = self.enc1(x)
        e2 = self.enc2(self.pool(e1))
        m = self.mid(self.pool(e2))
        d2 = self.dec2(torch.cat([self.up2(m), e2], dim=1))
        d1 = self.dec1(torch.cat([self.up1(d2), e1], dim=1))
        return d1


class Projector(nn.Module):
    """Two conv units, then conv + GroupNorm with no activation (128 channels)."""

    def __init__(self):
        super().__init__()
        self.body = nn.Sequential(
            conv_unit(EMBED_CHANNELS, EMBED_CHANNELS),
            conv_unit(EMBED_CHANNELS, EMBED_CHANNELS),
            conv_unit(EMBED_CHANNELS, EMBED_CHANNELS, activation=False),
        )

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if features.shape[1] != EMBED_CHANNELS:
            raise ContractError(f"projector expects {EMBED_CHANNELS} channels, got {features.shape[1]}")
        return self.body(features)


class Predictor(nn.Module):
    """One conv unit, then a 1x1 conv down to a single prediction channel."""

    def __init__(self):
        super().__init__()
        self.body = nn.Sequential(
            conv_unit(EMBED_CHANNELS, EMBED_CHANNELS),
            nn.Conv2d(EMBED_CHANNELS, 1, kernel_size=1),
        )

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if features.shape[1] != EMBED_CHANNELS:
            raise ContractError(f"predictor expects {EMBED_CHANNELS} channels, got {features.shape[1]}")
        return self.body(features)


class Branch(nn.Module):
    """Backbone + predictor, with an optional projector for the embedding field."""

    def __init__(self, in_channels: int, with_projector: bool, base_channels: int = 32):
        super().__init__()
        self.backbone = UNetBackbone(in_channels, base_channels)
        self.predictor = Predictor()
        self.projector = Projector() if with_projector else None

    @property
    def in_channels(self) -> int:
        return self.backbone.in_channels

    def forward(self, x: torch.Tensor) -> BranchOutputs:
        features = self.backbone(x)
        prediction = self.predictor(features)
        embedding = self.projector(features) if self.projector is not None else None
        return BranchOutputs(prediction=prediction, embedding=embedding)


class DualBranchModel(nn.Module):
    """Two independently initialized branches; branch 2 has no projector.

    ``with_branch2=False`` degenerates to a single-branch model for the
    ablation variants that do not use cross-branch consistency.
    """

    def __init__(
        self,
        in_channels: int,
        with_projector: bool = True,
        with_branch2: bool = True,
        base_channels: int = 32,
        seed: int = 0,
    ):
        super().__init__()
        self.branch1 = Branch(in_channels, with_projector=with_projector,
                              base_channels=base_channels)
        self.branch2 = (
            Branch(in_channels, with_projector=False, base_channels=base_channels)
            if with_branch2 else None
        )
        init_parameters(self.branch1, seed=seed)
        if self.branch2 is not None:
            init_parameters(self.branch2, seed=seed + 1)
        self.seed = seed

    @property
    def in_channels(self) -> int:
        return self.branch1.in_channels

    @property
    def arch(self) -> dict:
        return {
            "in_channels": self.branch1.backbone.in_channels,
            "base_channels": self.branch1.backbone.base_channels,
            "with_projector": self.branch1.projector is not None,
            "with_branch2": self.branch2 is not None,
        }

    def forward(self, x: torch.Tensor) -> tuple[BranchOutputs, Optional[BranchOutputs]]:
        out1 = self.branch1(x)
        out2 = self.branch2(x) if self.branch2 is not None else None
        return out1, out2

    def deployable_branch(self) -> Branch:
        """The branch used for inference: branch 2 when present, else branch 1."""
        return self.branch2 if self.branch2 is not None else self.branch1

    def set_input_stats(self, mean: torch.Tensor, std: torch.Tensor) -> None:
        """Install per-channel standardization in every branch."""
        for branch in (self.branch1, self.branch2):
            if branch is None:
                continue
            branch.backbone.input_mean.copy_(mean.reshape(1, -1, 1, 1))
            branch.backbone.input_std.copy_(std.reshape(1, -1, 1, 1).clamp(min=1e-8))


def init_parameters(module: nn.Module, seed: int) -> None:
    """Rectifier-aware fan-in init, deterministic per seed.

    Conv weights ~ N(0, sqrt(2 / fan_in)); biases and norm offsets zero,
    norm scales one. Iteration order over submodules is deterministic, so
    one seed fixes every parameter.
    """
    g = torch.Generator()
    g.manual_seed(seed)
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            fan_in = m.weight.shape[1] * m.weight.shape[2] * m.weight.shape[3]
            m.weight.data.normal_(0.0, math.sqrt(2.0 / fan_in), generator=g)
            if m.bias is not None:
                m.bias.data.zero_()
        elif isinstance(m, nn.ConvTranspose2d):
            fan_in = m.weight.shape[0] * m.weight.shape[2] * m.weight.shape[3]
            m.weight.data.normal_(0.0, math.sqrt(2.0 / fan_in), generator=g)
            if m.bias is not None:
                m.bias.data.zero_()
        elif isinstance(m, nn.GroupNorm):
            m.weight.data.fill_(1.0)
            m.bias.data.zero_()


def extract_inference_model(model: DualBranchModel) -> Branch:
    """Standalone copy of the deployable branch (backbone + predictor only).

    Predictions of the extracted model match the in-training branch exactly:
    parameters are copied verbatim and the projector never feeds the
    prediction path.
    """
    source = model.deployable_branch()
    extracted = Branch(
        in_channels=source.backbone.in_channels,
        with_projector=False,
        base_channels=source.backbone.base_channels,
    )
    extracted.backbone.load_state_dict(copy.deepcopy(source.backbone.state_dict()))
    extracted.predictor.load_state_dict(copy.deepcopy(source.predictor.state_dict()))
    return extracted


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())

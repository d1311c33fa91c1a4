"""Generator: seed map from (text code, noise), a non-linear-free background
pyramid, a chain of switch-gated synthesis blocks, and the RGB+mask head.

Each synthesis block doubles the depth of its foreground stream, splits the
result into a sigmoid switch and a residual half, gates the same-shaped
background feature with the switch, and upsamples the merged map while
halving channels. Block 0 therefore consumes the coarsest background level.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from ..config import Hyperparams
from ..embeddings import ConditioningAugment


@dataclass
class SwitchOverride:
    """How to treat the sigmoid switches: leave them learned, or clamp every
    block (or each block individually) to a constant in [0,1]."""

    mode: str = "learned"  # "learned" | "constant" | "per_block"
    values: tuple[float, ...] = ()

    @classmethod
    def learned(cls) -> "SwitchOverride":
        return cls("learned")

    @classmethod
    def constant(cls, c: float) -> "SwitchOverride":
        return cls("constant", (float(c),))

    @classmethod
    def per_block(cls, values: Sequence[float]) -> "SwitchOverride":
        return cls("per_block", tuple(float(v) for v in values))

    def __post_init__(self):
        if self.mode not in ("learned", "constant", "per_block"):
            raise ValueError(f"unknown override mode {self.mode!r}")
        if any(not 0.0 <= v <= 1.0 for v in self.values):
            raise ValueError("switch constants must lie in [0,1]")
        if self.mode == "constant" and len(self.values) != 1:
            raise ValueError("constant mode takes exactly one value")

    def value_for(self, block: int) -> Optional[float]:
        if self.mode == "learned":
            return None
        if self.mode == "constant":
            return self.values[0]
        if block >= len(self.values):
            raise ValueError(f"per-block override has no value for block {block}")
        return self.values[block]

    def to_dict(self) -> dict:
        return {"mode": self.mode, "values": list(self.values)}

    @classmethod
    def from_dict(cls, d: dict) -> "SwitchOverride":
        return cls(mode=d.get("mode", "learned"),
                   values=tuple(d.get("values", ())))


LEARNED = SwitchOverride.learned()


@dataclass
class GenOutput:
    image: torch.Tensor                       # (B,3,H,W) in [-1,1]
    mask: torch.Tensor                        # (B,1,H,W) in [0,1]
    switches: list[torch.Tensor]              # per-block applied switch maps
    final_feature: torch.Tensor               # (B,final_channels,H,W)


class BackgroundEncoder(nn.Module):
    """Downsamples the base image into one feature level per synthesis block
    using only stride-2 convolutions and batch norm -- no activations, so the
    path stays affine in inference mode."""

    def __init__(self, hp: Hyperparams):
        super().__init__()
        self.hp = hp
        steps = []
        in_ch = 3
        for level in range(hp.num_blocks):
            out_ch = hp.bg_level_channels(level)
            steps.append(nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1, bias=False),
                nn.BatchNorm2d(out_ch)))
            in_ch = out_ch
        self.steps = nn.ModuleList(steps)

    def forward(self, b: torch.Tensor) -> list[torch.Tensor]:
        if b.dim() != 4 or b.shape[1] != 3 or b.shape[2:] != (self.hp.height, self.hp.width):
            raise ValueError(f"expected base image (B,3,{self.hp.height},{self.hp.width}), "
                             f"got {tuple(b.shape)}")
        levels = []
        h = b
        for step in self.steps:
            h = step(h)
            levels.append(h)
        return levels  # fine -> coarse


class SynthesisBlock(nn.Module):
    """Doubles FG depth, splits into (switch logits, residual), gates BG with
    the sigmoid switch, then upsamples the merged map at half the channels."""

    def __init__(self, channels: int):
        super().__init__()
        if channels % 2 != 0:
            raise ValueError(f"block channels must be even, got {channels}")
        self.channels = channels
        self.fg_stack = nn.Sequential(
            nn.Conv2d(channels, 2 * channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(2 * channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(2 * channels, 2 * channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(2 * channels))
        self.out_conv = nn.Conv2d(channels, channels // 2, 3, padding=1, bias=False)
        self.out_bn = nn.BatchNorm2d(channels // 2)

    def forward(self, fg: torch.Tensor, bg: torch.Tensor,
                override: Optional[float] = None) -> tuple[torch.Tensor, torch.Tensor]:
        if fg.shape != bg.shape:
            raise ValueError(f"FG/BG shapes differ: {tuple(fg.shape)} vs {tuple(bg.shape)}")
        u = self.fg_stack(fg)
        switch_logits, fg_half = u[:, : self.channels], u[:, self.channels :]
        if override is None:
            switch = torch.sigmoid(switch_logits)
        else:
            switch = torch.full_like(switch_logits, override)
        merged = fg_half + switch * bg
        up = F.interpolate(merged, scale_factor=2, mode="nearest")
        return F.relu(self.out_bn(self.out_conv(up))), switch


class Generator(nn.Module):
    def __init__(self, hp: Hyperparams):
        super().__init__()
        self.hp = hp
        s = hp.seed_size
        self.ca = ConditioningAugment(hp.embed_dim, hp.cond_dim)
        self.seed_fc = nn.Linear(hp.cond_dim + hp.noise_dim, hp.seed_channels * s * s, bias=False)
        self.seed_bn = nn.BatchNorm1d(hp.seed_channels * s * s)
        self.bg_encoder = BackgroundEncoder(hp)
        self.blocks = nn.ModuleList(SynthesisBlock(c) for c in hp.channel_plan[:-1])
        self.head = nn.Conv2d(hp.final_channels, 4, 3, padding=1)

    def seed_map(self, c_hat: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        """FC from the concatenated (text code, noise) to the seed feature
        map, batch-normalized and ReLU-activated."""
        hp = self.hp
        if c_hat.shape[-1] != hp.cond_dim:
            raise ValueError(f"text code dim {c_hat.shape[-1]} != {hp.cond_dim}")
        if z.shape[-1] != hp.noise_dim:
            raise ValueError(f"noise dim {z.shape[-1]} != {hp.noise_dim}")
        h = F.relu(self.seed_bn(self.seed_fc(torch.cat([c_hat, z], dim=-1))))
        return h.view(-1, hp.seed_channels, hp.seed_size, hp.seed_size)

    def encode_background(self, b: torch.Tensor) -> list[torch.Tensor]:
        return self.bg_encoder(b)

    def forward(self, base: torch.Tensor, c_hat: torch.Tensor, z: torch.Tensor,
                override: SwitchOverride = LEARNED) -> GenOutput:
        levels = self.bg_encoder(base)
        fg = self.seed_map(c_hat, z)
        switches = []
        for j, block in enumerate(self.blocks):
            bg = levels[self.hp.num_blocks - 1 - j]  # coarse-to-fine consumption
            fg, switch = block(fg, bg, override.value_for(j))
            switches.append(switch)
        out = self.head(fg)
        return GenOutput(image=torch.tanh(out[:, :3]),
                         mask=torch.sigmoid(out[:, 3:4]),
                         switches=switches,
                         final_feature=fg)


class Stage2Generator(nn.Module):
    """Second-stage refiner for the stacked variant: consumes the first
    stage's final feature map plus a replicated text code and emits an image
    at twice the stage-1 resolution through one more synthesis block."""

    def __init__(self, hp_stage1: Hyperparams, reduce_channels: int = 64):
        super().__init__()
        if reduce_channels % 2 != 0:
            raise ValueError("reduce_channels must be even")
        self.hp1 = hp_stage1
        self.out_size = hp_stage1.width * 2
        self.reduce_channels = reduce_channels
        in_ch = hp_stage1.final_channels + hp_stage1.cond_dim
        self.fuse = nn.Sequential(
            nn.Conv2d(in_ch, reduce_channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(reduce_channels),
            nn.ReLU(inplace=True))
        # single BG level at the stage-1 resolution, conv+BN only
        self.bg_step = nn.Sequential(
            nn.Conv2d(3, reduce_channels, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(reduce_channels))
        self.block = SynthesisBlock(reduce_channels)
        self.head = nn.Conv2d(reduce_channels // 2, 4, 3, padding=1)

    def forward(self, final_feature: torch.Tensor, text_code: torch.Tensor,
                base: torch.Tensor, override: SwitchOverride = LEARNED) -> GenOutput:
        hp1 = self.hp1
        expect = (hp1.final_channels, hp1.width, hp1.width)
        if tuple(final_feature.shape[1:]) != expect:
            raise ValueError(f"stage-1 feature must be {expect}, got {tuple(final_feature.shape[1:])}")
        if text_code.shape[-1] != hp1.cond_dim:
            raise ValueError(f"text code dim {text_code.shape[-1]} != {hp1.cond_dim}")
        if base.shape[2:] != (self.out_size, self.out_size):
            raise ValueError(f"base must be {self.out_size}x{self.out_size}")
        tiled = text_code[:, :, None, None].expand(-1, -1, hp1.width, hp1.width)
        fg = self.fuse(torch.cat([final_feature, tiled], dim=1))
        bg = self.bg_step(base)
        fg, switch = self.block(fg, bg, override.value_for(0))
        out = self.head(fg)
        return GenOutput(image=torch.tanh(out[:, :3]),
                         mask=torch.sigmoid(out[:, 3:4]),
                         switches=[switch],
                         final_feature=fg)

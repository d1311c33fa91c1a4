"""Matching-aware discriminator: two independent downsampling paths (image,
image+mask), text fusion at the terminal resolution, and three least-squares
heads emitting raw unbounded scores.

The mask-free variant keeps the image path and fuses the text code onto the
image code instead, scoring with heads 1 and 3 only.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from ..config import Hyperparams


@dataclass
class Scores:
    d1: torch.Tensor
    d2: torch.Tensor  # zeros-like placeholder in the mask-free variant
    d3: torch.Tensor


def _downsample_stack(in_channels: int, base: int, layers: int) -> nn.Sequential:
    # No normalization anywhere in the discriminator: real, mismatch and
    # fake tuples pass through separate forwards, so batch statistics would
    # be computed per tuple class and erase exactly the absolute statistics
    # (e.g. an everywhere-empty mask channel) the matching heads must see.
    mods: list[nn.Module] = [
        nn.Conv2d(in_channels, base, 3, stride=2, padding=1),
        nn.LeakyReLU(0.2, inplace=True)]
    ch = base
    for _ in range(layers - 1):
        mods += [nn.Conv2d(ch, ch * 2, 3, stride=2, padding=1),
                 nn.LeakyReLU(0.2, inplace=True)]
        ch *= 2
    return nn.Sequential(*mods)


class Discriminator(nn.Module):
    def __init__(self, hp: Hyperparams):
        super().__init__()
        self.hp = hp
        n = hp.num_blocks
        t = hp.disc_terminal_channels
        self.terminal_channels = t
        self.image_path = _downsample_stack(3, hp.disc_channels, n)
        if hp.with_mask:
            self.mask_path = _downsample_stack(4, hp.disc_channels, n)
        self.fuse = nn.Sequential(
            nn.Conv2d(t + hp.cond_dim, t, 3, padding=1),
            nn.LeakyReLU(0.2, inplace=True))
        k = hp.seed_size
        self.head_image = nn.Conv2d(t, 1, kernel_size=k)
        if hp.with_mask:
            self.head_image_mask = nn.Conv2d(t, 1, kernel_size=k)
        self.head_joint = nn.Conv2d(t, 1, kernel_size=k)

    def _check_image(self, x: torch.Tensor):
        hp = self.hp
        if x.dim() != 4 or x.shape[1] != 3 or x.shape[2:] != (hp.height, hp.width):
            raise ValueError(f"expected image (B,3,{hp.height},{hp.width}), got {tuple(x.shape)}")

    def encode_image(self, x: torch.Tensor) -> torch.Tensor:
        self._check_image(x)
        return self.image_path(x)

    def encode_image_mask(self, x: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
        if not self.hp.with_mask:
            raise RuntimeError("mask path disabled (with_mask=False)")
        self._check_image(x)
        if s.shape != (x.shape[0], 1, *x.shape[2:]):
            raise ValueError(f"mask shape {tuple(s.shape)} does not match image")
        return self.mask_path(torch.cat([x, s], dim=1))

    def fuse_text(self, code: torch.Tensor, text_code: torch.Tensor) -> torch.Tensor:
        """Replicate the text code over the terminal grid, concatenate
        channel-wise and reduce back to the terminal width."""
        if text_code.shape[-1] != self.hp.cond_dim:
            raise ValueError(f"text code dim {text_code.shape[-1]} != {self.hp.cond_dim}")
        b, _, h, w = code.shape
        tiled = text_code[:, :, None, None].expand(b, -1, h, w)
        return self.fuse(torch.cat([code, tiled], dim=1))

    def score_image(self, code: torch.Tensor) -> torch.Tensor:
        return self.head_image(code).view(code.shape[0])

    def score_image_mask(self, code: torch.Tensor) -> torch.Tensor:
        return self.head_image_mask(code).view(code.shape[0])

    def score_joint(self, code: torch.Tensor, text_code: torch.Tensor) -> torch.Tensor:
        fused = self.fuse_text(code, text_code)
        return self.head_joint(fused).view(fused.shape[0])

    def forward(self, x: torch.Tensor, s: torch.Tensor | None,
                text_code: torch.Tensor) -> Scores:
        image_code = self.encode_image(x)
        d1 = self.score_image(image_code)
        if self.hp.with_mask:
            im_code = self.encode_image_mask(x, s)
            d2 = self.score_image_mask(im_code)
            d3 = self.score_joint(im_code, text_code)
        else:
            d2 = torch.zeros_like(d1)
            d3 = self.score_joint(image_code, text_code)
        return Scores(d1=d1, d2=d2, d3=d3)

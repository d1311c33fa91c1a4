"""The complete loss system: least-squares losses for the three discriminator
heads over the four matching-aware tuple classes, and the generator loss with
its KL and eroded-background L1 regularizers.

Conventions fixed here:
  * expectations are batch means, with no 0.5 prefactors;
  * the background L1 term is a per-batch sum (not normalized by selector
    area), so the selector size influences its magnitude;
  * the background selector is gradient-opaque: no gradient flows into the
    generated mask through binarize/erode.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import torch
import torch.nn.functional as F


def erode(binary: torch.Tensor, kernel: int = 3, iterations: int = 1) -> torch.Tensor:
    """Morphological erosion with a kernel x kernel square structuring element.

    Pixels outside the frame count as off, so erosion shrinks from the image
    border as well as from interior boundaries.
    """
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be odd and >= 1, got {kernel}")
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    out = binary.float()
    squeeze = out.dim() == 3
    if squeeze:
        out = out.unsqueeze(0)
    pad = kernel // 2
    for _ in range(iterations):
        padded = F.pad(out, (pad, pad, pad, pad), value=0.0)
        # erosion = min-pool; max_pool of the negation with zero border
        out = -F.max_pool2d(-padded, kernel, stride=1)
    if squeeze:
        out = out.squeeze(0)
    return out


def background_selector(mask: torch.Tensor, kernel: int = 3, iterations: int = 1,
                        threshold: float = 0.5) -> torch.Tensor:
    """Binary map of pixels that count as background for the L1 term.

    The object mask is binarized at ``threshold``, complemented, and the
    complement eroded ``iterations`` times so the penalty region backs away
    from object boundaries (and from the frame).
    """
    with torch.no_grad():
        bg = (mask <= threshold).float()
        return erode(bg, kernel=kernel, iterations=iterations)


def l1_background(x: torch.Tensor, b: torch.Tensor, selector: torch.Tensor) -> torch.Tensor:
    """Sum of |x - b| over selected pixels (selector broadcast across RGB),
    divided by batch size."""
    if x.shape != b.shape:
        raise ValueError(f"image shapes differ: {tuple(x.shape)} vs {tuple(b.shape)}")
    batched = x.dim() == 4
    batch = x.shape[0] if batched else 1
    sel = selector.detach()
    return ((x - b).abs() * sel).sum() / batch


@dataclass
class TupleBatch:
    """The four discriminator input classes, aligned by index.

    ``matching[i]``, ``mismatch_text[i]`` and ``mismatch_mask[i]`` share the
    same real image; the mismatching caption/mask come from a different
    sample (derangement: never the element's own). ``fake`` carries the
    generated image/mask, the caption they were conditioned on, and the base
    image each fake was painted onto.
    """

    image: torch.Tensor            # real images (B,3,H,W)
    mask: torch.Tensor             # matching masks (B,1,H,W)
    text: torch.Tensor             # matching text codes (B,C)
    mismatch_text: torch.Tensor    # deranged text codes (B,C)
    mismatch_mask: torch.Tensor    # deranged masks (B,1,H,W)
    fake_image: torch.Tensor
    fake_mask: torch.Tensor
    fake_text: torch.Tensor
    bases: torch.Tensor            # base images the fakes were conditioned on
    caption_ids: Sequence[str] = field(default_factory=list)
    image_ids: Sequence[str] = field(default_factory=list)


@dataclass
class HeadScores:
    """Raw LSGAN scores for every (head, tuple class) pair the losses need."""

    d1_real: torch.Tensor
    d1_fake: torch.Tensor
    d2_real: torch.Tensor
    d2_mismatch_mask: torch.Tensor
    d2_fake: torch.Tensor
    d3_real: torch.Tensor
    d3_mismatch_text: torch.Tensor
    d3_mismatch_mask: torch.Tensor
    d3_fake: torch.Tensor


def discriminator_loss(s: HeadScores) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Least-squares losses for the three heads.

    Real matching tuples are pushed to 1; mismatched and generated tuples to
    0. Head 3 sees all four tuple classes, head 2 the image-mask classes,
    head 1 images only.
    """
    l_d1 = (s.d1_real - 1).square().mean() + s.d1_fake.square().mean()
    l_d2 = ((s.d2_real - 1).square().mean()
            + s.d2_mismatch_mask.square().mean()
            + s.d2_fake.square().mean())
    l_d3 = ((s.d3_real - 1).square().mean()
            + s.d3_mismatch_text.square().mean()
            + s.d3_mismatch_mask.square().mean()
            + s.d3_fake.square().mean())
    return l_d1, l_d2, l_d3


@dataclass
class GeneratorLossParts:
    total: torch.Tensor
    adversarial: torch.Tensor
    kl: torch.Tensor
    bg_l1: torch.Tensor


def generator_loss(d1_fake: torch.Tensor, d2_fake: torch.Tensor, d3_fake: torch.Tensor,
                   mu: torch.Tensor, sigma: torch.Tensor,
                   fake_image: torch.Tensor, fake_mask: torch.Tensor, base: torch.Tensor,
                   kl_weight: float, bg_l1_weight: float,
                   erode_kernel: int = 3, erode_iterations: int = 1,
                   mask_threshold: float = 0.5) -> GeneratorLossParts:
    """Generator objective: push all three fake scores to 1, keep the
    augmented text distribution near N(0, I), and reproduce the base image
    on the eroded background region of the generated mask."""
    from .embeddings import kl_divergence

    if kl_weight < 0 or bg_l1_weight < 0:
        raise ValueError("loss weights must be non-negative")
    adv = ((d1_fake - 1).square() + (d2_fake - 1).square() + (d3_fake - 1).square()).mean()
    kl = kl_divergence(mu, sigma)
    selector = background_selector(fake_mask, kernel=erode_kernel,
                                   iterations=erode_iterations, threshold=mask_threshold)
    bg = l1_background(fake_image, base, selector)
    total = adv + kl_weight * kl + bg_l1_weight * bg
    return GeneratorLossParts(total=total, adversarial=adv, kl=kl, bg_l1=bg)


def discriminator_loss_no_mask(d1_real: torch.Tensor, d1_fake: torch.Tensor,
                               d3_real: torch.Tensor, d3_mismatch_text: torch.Tensor,
                               d3_fake: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Mask-free variant: only image and image-text tuples survive, so the
    mask head, the mask tuple terms and the background L1 are dropped.
    Returns the two surviving head losses; the discriminator trains on their
    sum."""
    l_d1 = (d1_real - 1).square().mean() + d1_fake.square().mean()
    l_d3 = ((d3_real - 1).square().mean()
            + d3_mismatch_text.square().mean()
            + d3_fake.square().mean())
    return l_d1, l_d3


def generator_loss_no_mask(d1_fake: torch.Tensor, d3_fake: torch.Tensor,
                           mu: torch.Tensor, sigma: torch.Tensor,
                           kl_weight: float) -> GeneratorLossParts:
    from .embeddings import kl_divergence

    if kl_weight < 0:
        raise ValueError("loss weights must be non-negative")
    adv = ((d1_fake - 1).square() + (d3_fake - 1).square()).mean()
    kl = kl_divergence(mu, sigma)
    total = adv + kl_weight * kl
    return GeneratorLossParts(total=total, adversarial=adv, kl=kl,
                              bg_l1=torch.zeros(()))

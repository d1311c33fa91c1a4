"""Procedural toy scenes: colored shapes on smooth gradient backgrounds.

Geometry, taking ``half`` = size fraction x min(W, H):

  ellipse    semi-axes (half, 0.75*half)         area 0.75*pi*half^2
  rectangle  extents (2*half, 1.5*half)          area 3*half^2
  triangle   base 2*half, height 1.8*half        area 0.9*half^2 * 2

Backgrounds are per-channel sinusoid gradients plus seeded noise, hard-clipped
to [0.35, 0.65] in unit range, so no background pixel ever approaches a
palette color.  Shapes are rendered with supersampled coverage; coverage is
zeroed where it is at most 0.5, which makes every mask-0 pixel bit-identical
to the clean background while keeping an anti-aliased interior edge.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
import torch

from .data import (DatasetManifest, ManifestRecord, SceneSample,
                   save_image_png, save_mask_png)
from .embeddings import SHAPES, SIZES, AttributeSpec, EmbeddingTable, toy_encode

PALETTE = {
    "red": (0.95, 0.10, 0.10),
    "green": (0.10, 0.90, 0.15),
    "blue": (0.10, 0.20, 0.95),
}
COLOR_NAMES = tuple(PALETTE)

SIZE_FRACTION = {"small": 0.22, "medium": 0.30, "large": 0.38}

BG_LOW, BG_HIGH = 0.35, 0.65
SUPERSAMPLE = 4


def attribute_grid() -> list[AttributeSpec]:
    """The 27 attribute combinations in canonical (shape, color, size) order."""
    grid = []
    for shape in SHAPES:
        for color in COLOR_NAMES:
            for size in SIZES:
                grid.append(AttributeSpec(shape=shape, color=PALETTE[color], size=size))
    return grid


def grid_row(attrs: AttributeSpec) -> int:
    shape_i = SHAPES.index(attrs.shape)
    color_i = COLOR_NAMES.index(_color_name(attrs.color))
    size_i = SIZES.index(attrs.size)
    return (shape_i * len(COLOR_NAMES) + color_i) * len(SIZES) + size_i


def _color_name(color) -> str:
    for name, rgb in PALETTE.items():
        if tuple(np.round(color, 6)) == tuple(np.round(rgb, 6)):
            return name
    raise ValueError(f"color {color!r} is not in the toy palette")


def random_attrs(rng: np.random.Generator) -> AttributeSpec:
    return AttributeSpec(
        shape=SHAPES[int(rng.integers(0, len(SHAPES)))],
        color=PALETTE[COLOR_NAMES[int(rng.integers(0, len(COLOR_NAMES)))]],
        size=SIZES[int(rng.integers(0, len(SIZES)))],
    )


def make_background(rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    """Object-free background, 3xHxW float in [BG_LOW, BG_HIGH]."""
    yy, xx = np.meshgrid(np.linspace(0.0, 1.0, height, dtype=np.float64),
                         np.linspace(0.0, 1.0, width, dtype=np.float64),
                         indexing="ij")
    bg = np.empty((3, height, width), dtype=np.float64)
    for c in range(3):
        fx, fy = rng.uniform(0.5, 2.0, size=2)
        px, py = rng.uniform(0.0, 2.0 * np.pi, size=2)
        wave = 0.5 * (np.sin(2.0 * np.pi * fx * xx + px)
                      + np.sin(2.0 * np.pi * fy * yy + py))
        bg[c] = 0.5 + 0.12 * wave
    bg += rng.normal(0.0, 0.015, size=bg.shape)
    np.clip(bg, BG_LOW, BG_HIGH, out=bg)
    return bg.astype(np.float32)


def shape_extents(shape: str, half: float) -> tuple[float, float]:
    """Half-extents (x, y) of the rendered shape."""
    if shape == "ellipse":
        return half, 0.75 * half
    if shape == "rectangle":
        return half, 0.75 * half
    if shape == "triangle":
        return half, 0.9 * half
    raise ValueError(f"unknown shape {shape!r}")


def render_coverage(shape: str, cx: float, cy: float, half: float,
                    width: int, height: int, ss: int = SUPERSAMPLE) -> np.ndarray:
    """Supersampled coverage fraction per pixel, HxW float in [0, 1]."""
    # subpixel sample centers
    step = 1.0 / ss
    offs = (np.arange(ss) + 0.5) * step
    ys = (np.arange(height)[:, None] + offs[None, :]).reshape(-1)  # H*ss
    xs = (np.arange(width)[:, None] + offs[None, :]).reshape(-1)   # W*ss
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    if shape == "ellipse":
        rx, ry = half, 0.75 * half
        inside = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    elif shape == "rectangle":
        inside = (np.abs(xx - cx) <= half) & (np.abs(yy - cy) <= 0.75 * half)
    elif shape == "triangle":
        h_t = 1.8 * half
        ax, ay = cx, cy - 0.5 * h_t
        bx, by = cx - half, cy + 0.5 * h_t
        gx, gy = cx + half, cy + 0.5 * h_t
        d1 = (xx - ax) * (by - ay) - (yy - ay) * (bx - ax)
        d2 = (xx - bx) * (gy - by) - (yy - by) * (gx - bx)
        d3 = (xx - gx) * (ay - gy) - (yy - gy) * (ax - gx)
        inside = ((d1 <= 0) & (d2 <= 0) & (d3 <= 0)) | ((d1 >= 0) & (d2 >= 0) & (d3 >= 0))
    else:
        raise ValueError(f"unknown shape {shape!r}")
    cov = inside.reshape(height, ss, width, ss).mean(axis=(1, 3))
    return cov.astype(np.float32)


def make_toy_sample(rng: np.random.Generator, width: int = 64, height: int = 64,
                    embed_dim: int = 128, attrs: Optional[AttributeSpec] = None,
                    image_id: str = "toy") -> tuple[SceneSample, AttributeSpec, torch.Tensor]:
    """One procedural scene plus its attributes and clean background."""
    if attrs is None:
        attrs = random_attrs(rng)
    bg01 = make_background(rng, width, height)
    half = SIZE_FRACTION[attrs.size] * min(width, height)
    ext_x, ext_y = shape_extents(attrs.shape, half)
    margin = 1.0
    cx = float(rng.uniform(ext_x + margin, width - ext_x - margin))
    cy = float(rng.uniform(ext_y + margin, height - ext_y - margin))
    cov = render_coverage(attrs.shape, cx, cy, half, width, height)
    mask = (cov > 0.5).astype(np.float32)
    alpha = cov * mask  # mask-0 pixels composite to the background exactly
    color = np.asarray(attrs.color, dtype=np.float32).reshape(3, 1, 1)
    img01 = bg01 * (1.0 - alpha) + color * alpha
    sample = SceneSample(
        image=torch.from_numpy(img01 * 2.0 - 1.0),
        mask=torch.from_numpy(mask).unsqueeze(0),
        embedding=torch.from_numpy(toy_encode(attrs, embed_dim)),
        image_id=image_id,
        caption_row=grid_row(attrs),
        background=torch.from_numpy(bg01 * 2.0 - 1.0),
    )
    return sample, attrs, sample.background


class ToyDataset:
    """In-memory procedural dataset; every sample carries its clean base."""

    def __init__(self, count: int, width: int = 64, height: int = 64,
                 embed_dim: int = 128, seed: int = 0, prefix: str = "toy"):
        if count < 1:
            raise ValueError("count must be positive")
        rng = np.random.default_rng(seed)
        self.width, self.height, self.embed_dim = width, height, embed_dim
        self.samples: list[SceneSample] = []
        self.attrs: list[AttributeSpec] = []
        for i in range(count):
            sample, attrs, _ = make_toy_sample(
                rng, width, height, embed_dim, image_id=f"{prefix}-{i:05d}")
            self.samples.append(sample)
            self.attrs.append(attrs)

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def sample(self, i: int, rng: np.random.Generator) -> SceneSample:
        return self.samples[i]

    def epoch(self, rng: np.random.Generator, shuffle: bool = True) -> Iterator[SceneSample]:
        order = np.arange(len(self.samples))
        if shuffle:
            rng.shuffle(order)
        for i in order:
            yield self.samples[int(i)]


def write_toy_dataset(out_dir: str | Path, count: int, width: int = 64,
                      height: int = 64, embed_dim: int = 128, seed: int = 0,
                      test_fraction: float = 0.1) -> DatasetManifest:
    """Self-contained dataset directory: images/, masks/, backgrounds/,
    embeddings.bin (27 attribute-grid rows), manifest.json."""
    out = Path(out_dir)
    for sub in ("images", "masks", "backgrounds"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    grid = attribute_grid()
    rows = np.stack([toy_encode(a, embed_dim) for a in grid])
    rng = np.random.default_rng(seed)
    records = []
    index: dict[str, list[int]] = {}
    n_test = int(round(count * test_fraction))
    for i in range(count):
        image_id = f"toy-{i:05d}"
        sample, attrs, background = make_toy_sample(
            rng, width, height, embed_dim, image_id=image_id)
        save_image_png(out / "images" / f"{i:05d}.png", sample.image)
        save_mask_png(out / "masks" / f"{i:05d}.png", sample.mask)
        save_image_png(out / "backgrounds" / f"{i:05d}.png", background)
        row = grid_row(attrs)
        index[image_id] = [row]
        records.append(ManifestRecord(
            image_id=image_id,
            image=f"images/{i:05d}.png",
            mask=f"masks/{i:05d}.png",
            rows=[row],
            split="test" if i >= count - n_test else "train",
            class_id=row,
            background=f"backgrounds/{i:05d}.png",
        ))
    table = EmbeddingTable(rows=rows, index=index)
    table.save(out / "embeddings.bin")
    manifest = DatasetManifest(root=out, embeddings="embeddings.bin", records=records)
    manifest.save(out / "manifest.json")
    (out / "attributes.json").write_text(json.dumps(
        [{"row": i, "shape": a.shape, "color": list(a.color), "size": a.size}
         for i, a in enumerate(grid)], indent=2) + "\n")
    return manifest

"""Dataset manifests, PNG ingestion, and background-crop sampling.

A manifest is a JSON file:

  {
    "embeddings": "embeddings.bin",
    "records": [
      {"image_id": "...", "image": "images/0.png", "mask": "masks/0.png",
       "rows": [0, 1], "split": "train", "class_id": 3,
       "background": "backgrounds/0.png"},
      ...
    ]
  }

Paths are relative to the manifest's directory.  The optional "background"
entry names a paired object-free image (the toy generator writes one);
datasets without it get bases from sample_background_crop at train time.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
import torch
from PIL import Image

from .embeddings import EmbeddingTable

MASK_THRESHOLD = 128  # grayscale masks binarized at 128/255


class DataError(ValueError):
    pass


@dataclass
class ManifestRecord:
    image_id: str
    image: str
    mask: str
    rows: list[int]
    split: str = "train"
    class_id: int = 0
    background: Optional[str] = None


@dataclass
class DatasetManifest:
    root: Path
    embeddings: str
    records: list[ManifestRecord] = field(default_factory=list)

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid manifest JSON: {exc}") from exc
        records = [ManifestRecord(**r) for r in doc["records"]]
        manifest = cls(root=path.parent, embeddings=doc["embeddings"], records=records)
        manifest.validate()
        return manifest

    def validate(self):
        seen_split: dict[str, str] = {}
        for rec in self.records:
            if rec.split not in ("train", "test"):
                raise DataError(f"record {rec.image_id}: unknown split {rec.split!r}")
            prior = seen_split.setdefault(rec.image_id, rec.split)
            if prior != rec.split:
                raise DataError(f"image {rec.image_id} appears in both splits")
            for rel in (rec.image, rec.mask, rec.background):
                if rel is None:
                    continue
                if not (self.root / rel).exists():
                    raise DataError(f"record {rec.image_id}: missing file {rel}")
        if not (self.root / self.embeddings).exists():
            raise DataError(f"missing embedding file {self.embeddings}")

    def split(self, name: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == name]

    def save(self, path: str | Path):
        doc = {
            "embeddings": self.embeddings,
            "records": [
                {k: v for k, v in vars(r).items() if v is not None}
                for r in self.records
            ],
        }
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")


@dataclass
class SceneSample:
    """One training scene: image in [-1, 1], binary mask (object = 1), the
    caption embedding row, and optionally the paired clean background."""
    image: torch.Tensor
    mask: torch.Tensor
    embedding: torch.Tensor
    image_id: str
    caption_row: int
    background: Optional[torch.Tensor] = None

    def validate(self):
        if self.image.dim() != 3 or self.image.shape[0] != 3:
            raise DataError(f"image must be 3xHxW, got {tuple(self.image.shape)}")
        if self.mask.shape != (1,) + tuple(self.image.shape[1:]):
            raise DataError(f"mask shape {tuple(self.mask.shape)} does not match image")
        uniq = torch.unique(self.mask)
        if not bool(((uniq == 0) | (uniq == 1)).all()):
            raise DataError("mask must be binary")


def load_image_png(path: str | Path, width: int, height: int) -> torch.Tensor:
    """Decode to 3xHxW float in [-1, 1], bilinear-resized to (width, height)."""
    try:
        img = Image.open(path).convert("RGB")
    except Exception as exc:
        raise DataError(f"{path}: cannot decode image: {exc}") from exc
    if img.size != (width, height):
        img = img.resize((width, height), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 127.5 - 1.0
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def load_mask_png(path: str | Path, width: int, height: int) -> torch.Tensor:
    """Decode a grayscale mask to 1xHxW binary {0, 1}, nearest-resized."""
    try:
        img = Image.open(path).convert("L")
    except Exception as exc:
        raise DataError(f"{path}: cannot decode mask: {exc}") from exc
    if img.size != (width, height):
        img = img.resize((width, height), Image.NEAREST)
    arr = np.asarray(img, dtype=np.uint8)
    return torch.from_numpy((arr >= MASK_THRESHOLD).astype(np.float32)).unsqueeze(0)


def save_image_png(path: str | Path, image: torch.Tensor):
    """Write a 3xHxW tensor in [-1, 1] as an 8-bit RGB PNG."""
    arr = ((image.detach().clamp(-1, 1) + 1.0) * 127.5).round().to(torch.uint8)
    Image.fromarray(arr.permute(1, 2, 0).numpy(), mode="RGB").save(path)


def save_mask_png(path: str | Path, mask: torch.Tensor):
    arr = (mask.detach().squeeze(0).clamp(0, 1) * 255).round().to(torch.uint8)
    Image.fromarray(arr.numpy(), mode="L").save(path)


def sample_background_crop(image: torch.Tensor, mask: torch.Tensor, size: int,
                           rng: np.random.Generator, max_overlap: float = 0.01,
                           max_tries: int = 50, return_offset: bool = False):
    """Uniformly sample a size x size crop whose object coverage is at most
    max_overlap; None once max_tries candidates have all failed."""
    _, h, w = image.shape
    if size > h or size > w:
        raise DataError(f"crop size {size} exceeds image {w}x{h}")
    for _ in range(max_tries):
        y = int(rng.integers(0, h - size + 1))
        x = int(rng.integers(0, w - size + 1))
        coverage = float(mask[0, y:y + size, x:x + size].mean())
        if coverage <= max_overlap:
            crop = image[:, y:y + size, x:x + size].clone()
            return (crop, (y, x)) if return_offset else crop
    return (None, None) if return_offset else None


class ManifestDataset:
    """Lazily decoded samples for one split of a manifest."""

    def __init__(self, manifest: DatasetManifest, width: int, height: int,
                 split: str = "train"):
        self.manifest = manifest
        self.width = width
        self.height = height
        self.records = manifest.split(split)
        self.table = EmbeddingTable.load(manifest.root / manifest.embeddings)

    def __len__(self) -> int:
        return len(self.records)

    def sample(self, i: int, rng: np.random.Generator) -> SceneSample:
        rec = self.records[i]
        if not rec.rows:
            raise DataError(f"record {rec.image_id} has no embedding rows")
        row = int(rec.rows[int(rng.integers(0, len(rec.rows)))])
        image = load_image_png(self.manifest.root / rec.image, self.width, self.height)
        mask = load_mask_png(self.manifest.root / rec.mask, self.width, self.height)
        background = None
        if rec.background is not None:
            background = load_image_png(self.manifest.root / rec.background,
                                        self.width, self.height)
        s = SceneSample(image=image, mask=mask,
                        embedding=torch.from_numpy(self.table.row(row).copy()),
                        image_id=rec.image_id, caption_row=row,
                        background=background)
        s.validate()
        return s

    def epoch(self, rng: np.random.Generator, shuffle: bool = True) -> Iterator[SceneSample]:
        order = np.arange(len(self.records))
        if shuffle:
            rng.shuffle(order)
        for i in order:
            yield self.sample(int(i), rng)

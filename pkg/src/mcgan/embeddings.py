"""Text-embedding ingestion, the toy attribute encoder, and conditioning
augmentation.

Embeddings arrive either as precomputed vectors in the binary table format
(see ``EmbeddingTable``) or from :func:`toy_encode`, which maps a discrete
attribute description to a fixed pseudo-random projection so that toy
captions are reproducible everywhere.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

MAGIC = b"MCGAN-EMB" + b"\x00" * 7

SHAPES = ("ellipse", "rectangle", "triangle")
SIZES = ("small", "medium", "large")

_TOY_PROJECTION_SEED = 7
_toy_projection_cache: dict[int, np.ndarray] = {}


class EmbeddingFormatError(ValueError):
    """Raised for malformed embedding files."""


@dataclass
class AttributeSpec:
    """Discrete description of a toy object: what to draw, in which color,
    how big."""

    shape: str
    color: tuple[float, float, float]
    size: str

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.size not in SIZES:
            raise ValueError(f"unknown size {self.size!r}")
        self.color = tuple(float(c) for c in self.color)
        if len(self.color) != 3 or not all(0.0 <= c <= 1.0 for c in self.color):
            raise ValueError("color must be an RGB triple in [0,1]")

    def key(self) -> str:
        r, g, b = self.color
        return f"{self.shape}:{r:.3f},{g:.3f},{b:.3f}:{self.size}"


class EmbeddingTable:
    """A (count x dim) float32 matrix of caption embeddings plus an index
    mapping image ids to their caption rows."""

    def __init__(self, rows: np.ndarray, index: Optional[dict[str, list[int]]] = None):
        rows = np.asarray(rows, dtype=np.float32)
        if rows.ndim != 2:
            raise ValueError("rows must be 2-D (count x dim)")
        if not np.isfinite(rows).all():
            raise ValueError("embeddings must be finite")
        self.rows = rows
        self.index = dict(index or {})
        for image_id, row_ids in self.index.items():
            for r in row_ids:
                if not 0 <= r < self.count:
                    raise ValueError(f"index entry {image_id!r} points outside the table")

    @property
    def count(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def row(self, i: int) -> np.ndarray:
        return self.rows[i]

    def rows_for(self, image_id: str) -> list[int]:
        if image_id not in self.index:
            raise KeyError(image_id)
        return self.index[image_id]

    def save(self, path: str | Path):
        path = Path(path)
        header = json.dumps({"count": self.count, "dim": self.dim}).encode("utf-8")
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", len(header)))
            f.write(header)
            f.write(self.rows.astype("<f4").tobytes(order="C"))
        if self.index:
            sidecar = path.with_suffix(path.suffix + ".index.json")
            sidecar.write_text(json.dumps(self.index, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path, expected_dim: Optional[int] = None) -> "EmbeddingTable":
        path = Path(path)
        data = path.read_bytes()
        if len(data) < len(MAGIC) + 4 or data[: len(MAGIC)] != MAGIC:
            raise EmbeddingFormatError(f"{path}: bad magic")
        (hlen,) = struct.unpack_from("<I", data, len(MAGIC))
        hstart = len(MAGIC) + 4
        if hstart + hlen > len(data):
            raise EmbeddingFormatError(f"{path}: truncated header")
        try:
            header = json.loads(data[hstart : hstart + hlen].decode("utf-8"))
            count, dim = int(header["count"]), int(header["dim"])
        except (ValueError, KeyError) as e:
            raise EmbeddingFormatError(f"{path}: malformed header: {e}") from e
        if count < 0 or dim < 1:
            raise EmbeddingFormatError(f"{path}: invalid count/dim {count}/{dim}")
        payload = data[hstart + hlen :]
        expected_bytes = count * dim * 4
        if len(payload) != expected_bytes:
            raise EmbeddingFormatError(
                f"{path}: payload has {len(payload)} bytes, expected {expected_bytes}")
        if expected_dim is not None and dim != expected_dim:
            raise EmbeddingFormatError(
                f"{path}: embedding dim {dim} does not match configured {expected_dim}")
        rows = np.frombuffer(payload, dtype="<f4").reshape(count, dim).copy()
        index: dict[str, list[int]] = {}
        sidecar = path.with_suffix(path.suffix + ".index.json")
        if sidecar.exists():
            index = {k: list(map(int, v)) for k, v in json.loads(sidecar.read_text()).items()}
        return cls(rows, index)


def _toy_projection(dim: int) -> np.ndarray:
    # fixed seed so the same attributes embed identically across runs/machines
    if dim not in _toy_projection_cache:
        rng = np.random.default_rng(_TOY_PROJECTION_SEED)
        _toy_projection_cache[dim] = rng.standard_normal((dim, 9)).astype(np.float32)
    return _toy_projection_cache[dim]


def toy_encode(attrs: AttributeSpec, dim: int = 128) -> np.ndarray:
    """Deterministically embed a toy attribute triple into ``dim`` dimensions.

    Encoding: one-hot(shape) ++ rgb ++ one-hot(size), projected by a fixed
    seeded matrix. Identical attributes always give identical vectors.
    """
    raw = np.zeros(9, dtype=np.float32)
    raw[SHAPES.index(attrs.shape)] = 1.0
    raw[3:6] = attrs.color
    raw[6 + SIZES.index(attrs.size)] = 1.0
    return _toy_projection(dim) @ raw


def interpolate(phi1: np.ndarray, phi2: np.ndarray, alpha: float) -> np.ndarray:
    """Linear interpolation (1-alpha)*phi1 + alpha*phi2, exact at endpoints."""
    phi1 = np.asarray(phi1, dtype=np.float32)
    phi2 = np.asarray(phi2, dtype=np.float32)
    if phi1.shape != phi2.shape:
        raise ValueError(f"shape mismatch {phi1.shape} vs {phi2.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0,1], got {alpha}")
    if alpha == 0.0:
        return phi1.copy()
    if alpha == 1.0:
        return phi2.copy()
    return (1.0 - alpha) * phi1 + alpha * phi2


@dataclass
class ConditioningResult:
    """Gaussian reparameterization of a text embedding: mean, diagonal std
    and the sample c_hat = mu + sigma * eps."""

    mu: torch.Tensor
    sigma: torch.Tensor
    c_hat: torch.Tensor


class ConditioningAugment(nn.Module):
    """One affine map from the text embedding to [mu || logvar]; sigma is
    exp(0.5 * logvar) so it is positive by construction."""

    def __init__(self, embed_dim: int, cond_dim: int):
        super().__init__()
        self.embed_dim = embed_dim
        self.cond_dim = cond_dim
        self.fc = nn.Linear(embed_dim, cond_dim * 2)

    def project(self, phi: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if phi.shape[-1] != self.embed_dim:
            raise ValueError(f"embedding dim {phi.shape[-1]} != {self.embed_dim}")
        out = self.fc(phi)
        mu, logvar = out[..., : self.cond_dim], out[..., self.cond_dim :]
        return mu, torch.exp(0.5 * logvar)

    def forward(self, phi: torch.Tensor, epsilon: Optional[torch.Tensor] = None,
                generator: Optional[torch.Generator] = None) -> ConditioningResult:
        mu, sigma = self.project(phi)
        if epsilon is None:
            epsilon = torch.randn(mu.shape, generator=generator,
                                  dtype=mu.dtype, device=mu.device)
        elif epsilon.shape != mu.shape:
            raise ValueError(f"epsilon shape {tuple(epsilon.shape)} != {tuple(mu.shape)}")
        return ConditioningResult(mu=mu, sigma=sigma, c_hat=mu + sigma * epsilon)


def kl_divergence(mu: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, diag sigma^2) || N(0, I)) in closed form, averaged over any
    leading batch dimensions:  0.5 * sum_i (mu_i^2 + sigma_i^2 - log sigma_i^2 - 1).
    """
    if (sigma <= 0).any():
        raise ValueError("sigma must be positive")
    per_sample = 0.5 * (mu.square() + sigma.square() - 2.0 * torch.log(sigma) - 1.0).sum(dim=-1)
    return per_sample.mean()

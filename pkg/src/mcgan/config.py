"""Configuration objects: architecture hyperparameters and training settings.

``Hyperparams`` is the single source of architectural truth; every model
module derives its channel plan and spatial sizes from it.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional


class ConfigError(ValueError):
    pass


@dataclass
class Hyperparams:
    """Architecture hyperparameters.

    The generator's channel plan halves per synthesis block starting from
    ``seed_channels``; at the defaults (4 blocks, 1024 seed channels) the
    final feature map has 64 channels.
    """

    width: int = 128
    height: int = 128
    num_blocks: int = 4
    noise_dim: int = 100
    embed_dim: int = 1024
    cond_dim: int = 128
    seed_channels: int = 1024
    disc_channels: int = 64
    kl_weight: float = 2.0
    bg_l1_weight: float = 15.0
    with_mask: bool = True
    stacked: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.width != self.height:
            raise ConfigError(f"square outputs assumed, got {self.width}x{self.height}")
        n = self.num_blocks
        if n < 1:
            raise ConfigError("num_blocks must be >= 1")
        if self.width % (1 << n) != 0:
            raise ConfigError(f"width {self.width} not divisible by 2^{n}")
        if self.seed_channels % (1 << n) != 0:
            raise ConfigError(f"seed_channels {self.seed_channels} not divisible by 2^{n}")
        if self.seed_channels >> n < 1:
            raise ConfigError("channel plan bottoms out below 1 channel")
        for name in ("noise_dim", "embed_dim", "cond_dim", "disc_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.kl_weight < 0 or self.bg_l1_weight < 0:
            raise ConfigError("loss weights must be non-negative")

    @property
    def seed_size(self) -> int:
        """Spatial side of the seed feature map (W / 2^N)."""
        return self.width >> self.num_blocks

    @property
    def channel_plan(self) -> list[int]:
        """FG channels entering block 0..N-1, plus the final feature depth."""
        return [self.seed_channels >> k for k in range(self.num_blocks + 1)]

    @property
    def final_channels(self) -> int:
        return self.seed_channels >> self.num_blocks

    def fg_size(self, block: int) -> int:
        """Spatial side of the FG map entering ``block`` (0-based)."""
        return self.width >> (self.num_blocks - block)

    def bg_level_channels(self, level: int) -> int:
        """Channels of BG pyramid level ``level`` (0 = finest, at W/2)."""
        return self.seed_channels >> (self.num_blocks - 1 - level)

    @property
    def disc_terminal_channels(self) -> int:
        return self.disc_channels << (self.num_blocks - 1)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown hyperparameter keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainConfig:
    """Optimization, schedule, augmentation and reproducibility settings."""

    lr: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    batch_size: int = 32
    epochs: int = 200
    lr_decay_every: int = 200
    lr_decay_factor: float = 0.5
    seed: int = 0
    flip: bool = False
    zoom: bool = False
    crop: bool = False
    log_every: int = 10
    checkpoint_every: int = 0  # epochs between checkpoints; 0 = final only
    deterministic: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.lr <= 0 or self.batch_size < 2 or self.epochs < 1:
            raise ConfigError("lr, batch_size >= 2 and epochs >= 1 required")
        if self.lr_decay_every < 1 or not (0 < self.lr_decay_factor <= 1):
            raise ConfigError("invalid learning-rate schedule")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class DataConfig:
    """Where training data comes from: a dataset manifest or the procedural
    toy generator."""

    kind: str = "toy"  # "toy" | "manifest"
    manifest: Optional[str] = None
    train_count: int = 2000
    val_count: int = 200

    def __post_init__(self):
        if self.kind not in ("toy", "manifest"):
            raise ConfigError(f"unknown data kind {self.kind!r}")
        if self.kind == "manifest" and not self.manifest:
            raise ConfigError("manifest path required for kind='manifest'")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DataConfig":
        return cls(**d)


@dataclass
class RunConfig:
    model: Hyperparams = field(default_factory=Hyperparams)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "train": self.train.to_dict(),
                "data": self.data.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(model=Hyperparams.from_dict(d.get("model", {})),
                   train=TrainConfig.from_dict(d.get("train", {})),
                   data=DataConfig.from_dict(d.get("data", {})))

    def save(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def toy_hyperparams(**overrides) -> Hyperparams:
    """Desk-scale preset: 64x64 canvas, 3 blocks, lean channel plan.

    cond_dim and noise_dim stay small and disc_channels generous: the
    matching heads must separate 27 attribute combinations quickly enough to
    pull the augmented code away from the KL prior within a short CPU
    training budget, and the conditioning signal must not drown in noise at
    the seed projection."""
    base = dict(width=64, height=64, num_blocks=3, noise_dim=16, embed_dim=128,
                cond_dim=8, seed_channels=64, disc_channels=48,
                kl_weight=2.0, bg_l1_weight=5.0)
    base.update(overrides)
    return Hyperparams(**base)

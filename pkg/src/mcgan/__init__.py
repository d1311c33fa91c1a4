"""Multi-conditional GAN for painting text-described objects onto
backgrounds: models, losses, training harness, experiment drivers, and an
HTTP inference service."""

from .config import (ConfigError, DataConfig, Hyperparams, RunConfig,
                     TrainConfig, toy_hyperparams)
from .embeddings import (AttributeSpec, ConditioningAugment,
                         EmbeddingFormatError, EmbeddingTable, interpolate,
                         kl_divergence, toy_encode)
from .losses import (background_selector, discriminator_loss,
                     discriminator_loss_no_mask, erode, generator_loss,
                     generator_loss_no_mask, l1_background)
from .models import (BackgroundEncoder, Discriminator, GenOutput, Generator,
                     LEARNED, Stage2Generator, SwitchOverride, SynthesisBlock)
from .training import Trainer, TrainingError, lr_schedule

__version__ = "0.1.0"

__all__ = [
    "AttributeSpec", "BackgroundEncoder", "ConditioningAugment", "ConfigError",
    "DataConfig", "Discriminator", "EmbeddingFormatError", "EmbeddingTable",
    "GenOutput", "Generator", "Hyperparams", "LEARNED", "RunConfig",
    "Stage2Generator", "SwitchOverride", "SynthesisBlock", "TrainConfig",
    "Trainer", "TrainingError", "background_selector", "discriminator_loss",
    "discriminator_loss_no_mask", "erode", "generator_loss",
    "generator_loss_no_mask", "interpolate", "kl_divergence", "l1_background",
    "lr_schedule", "toy_encode", "toy_hyperparams",
]

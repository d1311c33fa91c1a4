"""Tuple assembly and the alternating LSGAN training loop.

Determinism contract: all stochastic draws flow through two explicit
generators (one numpy Generator for data order, augmentation, and crops; one
torch.Generator for noise and conditioning epsilon), consumed in a fixed
order.  Checkpoints carry both RNG states, so resuming at an epoch boundary
reproduces the uninterrupted run bitwise on a single thread.
"""
from __future__ import annotations

import base64
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpoint import (flatten_adam, load_checkpoint, load_module, namespace,
                         restore_adam, save_checkpoint)
from .config import ConfigError, Hyperparams, TrainConfig
from .data import SceneSample, sample_background_crop
from .embeddings import ConditioningResult
from .losses import (TupleBatch, HeadScores, discriminator_loss,
                     discriminator_loss_no_mask, generator_loss,
                     generator_loss_no_mask)
from .models import Discriminator, Generator


class TrainingError(RuntimeError):
    pass


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return cfg.lr * cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every)


def init_weights(module: nn.Module, generator: torch.Generator):
    """DCGAN-style init: convs/linears N(0, 0.02), BN scale N(1, 0.02)."""
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                m.weight.normal_(0.0, 0.02, generator=generator)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, (nn.BatchNorm2d, nn.BatchNorm1d)):
                m.weight.normal_(1.0, 0.02, generator=generator)
                m.bias.zero_()


def augment(image: torch.Tensor, mask: torch.Tensor, rng: np.random.Generator,
            flip: bool = False, zoom: bool = False, crop: bool = False
            ) -> tuple[torch.Tensor, torch.Tensor]:
    """One shared geometric transform for an image and its mask."""
    _, h, w = image.shape
    pair = torch.cat([image, mask], dim=0)
    if flip and rng.random() < 0.5:
        pair = torch.flip(pair, dims=[2])
    if zoom:
        factor = float(rng.uniform(1.0, 1.15))
        zh, zw = int(round(h * factor)), int(round(w * factor))
        if (zh, zw) != (h, w):
            img_part = F.interpolate(pair[:3].unsqueeze(0), size=(zh, zw),
                                     mode="bilinear", align_corners=False)
            mask_part = F.interpolate(pair[3:].unsqueeze(0), size=(zh, zw),
                                      mode="nearest")
            pair = torch.cat([img_part, mask_part], dim=1).squeeze(0)
            top, left = (zh - h) // 2, (zw - w) // 2
            pair = pair[:, top:top + h, left:left + w]
    if crop:
        j = max(1, int(round(0.05 * min(h, w))))
        dy = int(rng.integers(-j, j + 1))
        dx = int(rng.integers(-j, j + 1))
        if dx or dy:
            padded = F.pad(pair.unsqueeze(0), (j, j, j, j), mode="reflect").squeeze(0)
            pair = padded[:, j + dy:j + dy + h, j + dx:j + dx + w]
    out_mask = (pair[3:] > 0.5).float()
    return pair[:3].contiguous(), out_mask.contiguous()


def derangement_indices(ids: Sequence, base_shift: int = 1) -> list[int]:
    """Cyclic shift by base_shift, advancing positions whose shifted partner
    shares the same id (duplicate captions make plain shifts collide)."""
    n = len(ids)
    if n < 2:
        raise TrainingError("derangements need a batch of at least 2")
    out = []
    for i in range(n):
        for s in range(base_shift, base_shift + n - 1):
            j = (i + s) % n
            if ids[j] != ids[i]:
                out.append(j)
                break
        else:
            raise TrainingError("cannot build mismatch pairs: all ids in the batch are equal")
    return out


def collate(samples: Sequence[SceneSample]) -> dict:
    return {
        "image": torch.stack([s.image for s in samples]),
        "mask": torch.stack([s.mask for s in samples]),
        "text": torch.stack([s.embedding for s in samples]),
        "caption_ids": [s.caption_row for s in samples],
        "image_ids": [s.image_id for s in samples],
    }


def batch_bases(samples: Sequence[SceneSample], rng: np.random.Generator,
                size: int) -> torch.Tensor:
    """Object-free bases for fake generation: the clean background of the next
    sample in the batch when the dataset provides one, otherwise an
    object-free crop sampled from it."""
    n = len(samples)
    bases = []
    for i in range(n):
        donor = samples[(i + 1) % n]
        if donor.background is not None:
            bases.append(donor.background)
            continue
        crop = sample_background_crop(donor.image, donor.mask, size, rng)
        if crop is None:
            # fall back to scanning the batch for any usable donor
            for k in range(n):
                other = samples[(i + 1 + k) % n]
                crop = sample_background_crop(other.image, other.mask, size, rng)
                if crop is not None:
                    break
        if crop is None:
            raise TrainingError("no object-free background crop found in batch")
        bases.append(crop)
    return torch.stack(bases)


def make_tuples(samples: Sequence[SceneSample], bases: torch.Tensor,
                generator: Generator, torch_gen: torch.Generator
                ) -> tuple[TupleBatch, ConditioningResult]:
    """Assemble the four tuple classes for one batch.  The fake pass keeps its
    graph; the caller decides what to detach."""
    batch = collate(samples)
    perm_t = derangement_indices(batch["caption_ids"])
    perm_m = derangement_indices(batch["image_ids"])
    phi = batch["text"]
    noise = torch.randn(phi.shape[0], generator.hp.noise_dim, generator=torch_gen)
    ca = generator.ca(phi, generator=torch_gen)
    out = generator(bases, ca.c_hat, noise)
    return TupleBatch(
        image=batch["image"],
        mask=batch["mask"],
        text=phi,
        mismatch_text=phi[perm_t],
        mismatch_mask=batch["mask"][perm_m],
        fake_image=out.image,
        fake_mask=out.mask,
        fake_text=phi,
        bases=bases,
        caption_ids=list(batch["caption_ids"]),
        image_ids=list(batch["image_ids"]),
    ), ca


@dataclass
class StepLosses:
    l_d1: float
    l_d2: float
    l_d3: float
    l_g: float
    kl: float
    l1_bg: float


class Trainer:
    """Alternating one-step D / one-step G optimization."""

    def __init__(self, hp: Hyperparams, cfg: TrainConfig, dataset,
                 out_dir: str | Path, val_dataset=None):
        hp.validate()
        cfg.validate()
        if hp.stacked:
            raise ConfigError("no training loop for the stacked refiner; "
                              "train a single-stage model")
        self.hp = hp
        self.cfg = cfg
        self.dataset = dataset
        self.val_dataset = val_dataset
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        if cfg.deterministic:
            torch.use_deterministic_algorithms(True)
        torch.manual_seed(cfg.seed)
        self.gen = Generator(hp)
        self.disc = Discriminator(hp)
        init_gen = torch.Generator().manual_seed(cfg.seed)
        init_weights(self.gen, init_gen)
        init_weights(self.disc, init_gen)
        self.opt_g = torch.optim.Adam(self.gen.parameters(), lr=cfg.lr,
                                      betas=(cfg.adam_beta1, cfg.adam_beta2))
        self.opt_d = torch.optim.Adam(self.disc.parameters(), lr=cfg.lr,
                                      betas=(cfg.adam_beta1, cfg.adam_beta2))
        self.torch_gen = torch.Generator().manual_seed(cfg.seed + 1)
        self.data_rng = np.random.default_rng(cfg.seed + 2)
        self.step = 0
        self.epoch = 0
        self._start = time.monotonic()
        self._log_file = self.out_dir / "train_log.ndjson"

    # ------------------------------------------------------------------ data

    def _batches(self):
        batch: list[SceneSample] = []
        for sample in self.dataset.epoch(self.data_rng):
            if self.cfg.flip or self.cfg.zoom or self.cfg.crop:
                image, mask = augment(sample.image, sample.mask, self.data_rng,
                                      self.cfg.flip, self.cfg.zoom, self.cfg.crop)
                sample = SceneSample(image=image, mask=mask,
                                     embedding=sample.embedding,
                                     image_id=sample.image_id,
                                     caption_row=sample.caption_row,
                                     background=sample.background)
            batch.append(sample)
            if len(batch) == self.cfg.batch_size:
                yield batch
                batch = []
        # drop the trailing partial batch: derangements and batch statistics
        # assume full batches

    # ----------------------------------------------------------------- steps

    def train_step(self, samples: Sequence[SceneSample]) -> StepLosses:
        hp, cfg = self.hp, self.cfg
        bases = batch_bases(samples, self.data_rng, hp.width)
        batch, ca = make_tuples(samples, bases, self.gen, self.torch_gen)
        text_code_d = ca.mu.detach()
        fake_image_d = batch.fake_image.detach()
        fake_mask_d = batch.fake_mask.detach()

        # discriminator update
        mismatch_code_d = self.gen.ca.project(batch.mismatch_text)[0].detach()
        if hp.with_mask:
            code_real = self.disc.encode_image_mask(batch.image, batch.mask)
            code_mm = self.disc.encode_image_mask(batch.image, batch.mismatch_mask)
            code_fake = self.disc.encode_image_mask(fake_image_d, fake_mask_d)
            scores = HeadScores(
                d1_real=self.disc.score_image(self.disc.encode_image(batch.image)),
                d1_fake=self.disc.score_image(self.disc.encode_image(fake_image_d)),
                d2_real=self.disc.score_image_mask(code_real),
                d2_mismatch_mask=self.disc.score_image_mask(code_mm),
                d2_fake=self.disc.score_image_mask(code_fake),
                d3_real=self.disc.score_joint(code_real, text_code_d),
                d3_mismatch_text=self.disc.score_joint(code_real, mismatch_code_d),
                d3_mismatch_mask=self.disc.score_joint(code_mm, text_code_d),
                d3_fake=self.disc.score_joint(code_fake, text_code_d),
            )
            l_d1, l_d2, l_d3 = discriminator_loss(scores)
            loss_d = l_d1 + l_d2 + l_d3
        else:
            code_real = self.disc.encode_image(batch.image)
            code_fake = self.disc.encode_image(fake_image_d)
            d1_real = self.disc.score_image(code_real)
            d1_fake = self.disc.score_image(code_fake)
            d3_real = self.disc.score_joint(code_real, text_code_d)
            d3_mm = self.disc.score_joint(code_real, mismatch_code_d)
            d3_fake = self.disc.score_joint(code_fake, text_code_d)
            l_d1, l_d3 = discriminator_loss_no_mask(d1_real, d1_fake, d3_real,
                                                    d3_mm, d3_fake)
            l_d2 = torch.zeros(())
            loss_d = l_d1 + l_d3
        self.opt_d.zero_grad(set_to_none=True)
        loss_d.backward()
        self.opt_d.step()

        # generator update with fresh noise and epsilon
        phi = batch.text
        noise = torch.randn(phi.shape[0], hp.noise_dim, generator=self.torch_gen)
        ca_g = self.gen.ca(phi, generator=self.torch_gen)
        out = self.gen(bases, ca_g.c_hat, noise)
        if hp.with_mask:
            code_fake_g = self.disc.encode_image_mask(out.image, out.mask)
            d1_f = self.disc.score_image(self.disc.encode_image(out.image))
            d2_f = self.disc.score_image_mask(code_fake_g)
            d3_f = self.disc.score_joint(code_fake_g, ca_g.mu)
            parts = generator_loss(d1_f, d2_f, d3_f, ca_g.mu, ca_g.sigma,
                                   out.image, out.mask, bases,
                                   kl_weight=hp.kl_weight,
                                   bg_l1_weight=hp.bg_l1_weight)
        else:
            code_fake_g = self.disc.encode_image(out.image)
            d1_f = self.disc.score_image(code_fake_g)
            d3_f = self.disc.score_joint(code_fake_g, ca_g.mu)
            parts = generator_loss_no_mask(d1_f, d3_f, ca_g.mu, ca_g.sigma,
                                           kl_weight=hp.kl_weight)
        self.opt_g.zero_grad(set_to_none=True)
        parts.total.backward()
        self.opt_g.step()

        losses = StepLosses(
            l_d1=float(l_d1.detach()), l_d2=float(l_d2.detach()),
            l_d3=float(l_d3.detach()), l_g=float(parts.total.detach()),
            kl=float(parts.kl.detach()), l1_bg=float(parts.bg_l1.detach()))
        self.step += 1
        self._check_finite(losses, loss_d)
        if cfg.log_every and self.step % cfg.log_every == 0:
            self._log(losses)
        return losses

    def _check_finite(self, losses: StepLosses, loss_d: torch.Tensor):
        values = [losses.l_d1, losses.l_d2, losses.l_d3, losses.l_g,
                  losses.kl, losses.l1_bg, float(loss_d.detach())]
        if all(np.isfinite(v) for v in values):
            return
        dump = {
            "step": self.step, "epoch": self.epoch, "losses": vars(losses),
            "grad_norm_g": _grad_norm(self.gen), "grad_norm_d": _grad_norm(self.disc),
        }
        path = self.out_dir / "nan_diagnostic.json"
        path.write_text(json.dumps(dump, indent=2) + "\n")
        raise TrainingError(f"non-finite loss at step {self.step}; diagnostic in {path}")

    def _log(self, losses: StepLosses):
        record = {
            "step": self.step, "epoch": self.epoch,
            "lr": lr_schedule(self.epoch, self.cfg),
            "L_D1": losses.l_d1, "L_D2": losses.l_d2, "L_D3": losses.l_d3,
            "L_G": losses.l_g, "KL": losses.kl, "L1_bg": losses.l1_bg,
            "wallclock": time.monotonic() - self._start,
        }
        with self._log_file.open("a") as fh:
            fh.write(json.dumps(record) + "\n")

    # ---------------------------------------------------------------- epochs

    def train_epoch(self):
        lr = lr_schedule(self.epoch, self.cfg)
        for group in (*self.opt_g.param_groups, *self.opt_d.param_groups):
            group["lr"] = lr
        self.gen.train()
        self.disc.train()
        last = None
        for batch in self._batches():
            last = self.train_step(batch)
        self.epoch += 1
        return last

    def run(self, epochs: Optional[int] = None):
        total = self.cfg.epochs if epochs is None else epochs
        while self.epoch < total:
            self.train_epoch()
            if (self.cfg.checkpoint_every
                    and self.epoch % self.cfg.checkpoint_every == 0
                    and self.epoch < total):
                self.save(self.out_dir / f"checkpoint-{self.epoch:05d}")
        self.save(self.out_dir / "checkpoint-final")

    # ------------------------------------------------------------ checkpoint

    def save(self, path: str | Path):
        tensors: dict[str, torch.Tensor] = {}
        tensors.update(namespace("generator", self.gen.state_dict()))
        tensors.update(namespace("discriminator", self.disc.state_dict()))
        g_params = list(self.gen.named_parameters())
        d_params = list(self.disc.named_parameters())
        og_tensors, og_meta = flatten_adam(self.opt_g, g_params)
        od_tensors, od_meta = flatten_adam(self.opt_d, d_params)
        tensors.update(namespace("optim_g", og_tensors))
        tensors.update(namespace("optim_d", od_tensors))
        train_state = {
            "epoch": self.epoch,
            "step": self.step,
            "train_config": self.cfg.to_dict(),
            "optim_g": og_meta,
            "optim_d": od_meta,
            "numpy_rng": self.data_rng.bit_generator.state,
            "torch_rng": base64.b64encode(
                self.torch_gen.get_state().numpy().tobytes()).decode("ascii"),
        }
        save_checkpoint(path, self.hp, tensors, train_state, bn_mode="train")

    @classmethod
    def resume(cls, path: str | Path, dataset, out_dir: str | Path,
               val_dataset=None) -> "Trainer":
        hp, tensors, train_state = load_checkpoint(path)
        if train_state is None:
            raise TrainingError(f"{path}: checkpoint has no train state to resume")
        cfg = TrainConfig.from_dict(train_state["train_config"])
        trainer = cls(hp, cfg, dataset, out_dir, val_dataset=val_dataset)
        load_module(trainer.gen, tensors, "generator")
        load_module(trainer.disc, tensors, "discriminator")
        # Adam state tensors live under optim_g/<param>/exp_avg etc.
        og = {k[len("optim_g/"):]: v for k, v in tensors.items()
              if k.startswith("optim_g/")}
        od = {k[len("optim_d/"):]: v for k, v in tensors.items()
              if k.startswith("optim_d/")}
        restore_adam(trainer.opt_g, list(trainer.gen.named_parameters()),
                     og, train_state["optim_g"])
        restore_adam(trainer.opt_d, list(trainer.disc.named_parameters()),
                     od, train_state["optim_d"])
        trainer.epoch = train_state["epoch"]
        trainer.step = train_state["step"]
        trainer.data_rng.bit_generator.state = train_state["numpy_rng"]
        raw = base64.b64decode(train_state["torch_rng"])
        trainer.torch_gen.set_state(
            torch.frombuffer(bytearray(raw), dtype=torch.uint8).clone())
        return trainer


def _grad_norm(module: nn.Module) -> float:
    total = 0.0
    for p in module.parameters():
        if p.grad is not None:
            total += float(p.grad.detach().pow(2).sum())
    return float(np.sqrt(total))

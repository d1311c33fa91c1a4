"""Inference-side experiment drivers: embedding interpolation, noise sweeps,
switch overrides, and switch/mask statistics.

Every driver is a pure function of (model weights, inputs, seed): models are
flipped to eval mode under no_grad and restored afterwards, so running an
experiment never perturbs training state.
"""
from __future__ import annotations

import json
from contextlib import contextmanager
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, ImageDraw

from .config import Hyperparams
from .data import SceneSample
from .embeddings import interpolate
from .losses import background_selector, l1_background
from .models import GenOutput, Generator, SwitchOverride, LEARNED

METRICS_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["experiment", "values"],
    "additionalProperties": False,
    "properties": {
        "experiment": {"type": "string"},
        "seed": {"type": ["integer", "null"]},
        "inputs": {"type": "object"},
        "values": {"type": "object"},
    },
}


def write_metrics(path: str | Path, doc: dict):
    jsonschema.validate(doc, METRICS_SCHEMA)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def draw_latents(hp: Hyperparams, batch: int, seed: int
                 ) -> tuple[torch.Tensor, torch.Tensor]:
    """The canonical latent draw: one generator seeded from ``seed`` yields
    epsilon then z, in that order, everywhere (experiments and service)."""
    g = torch.Generator().manual_seed(seed)
    eps = torch.randn(batch, hp.cond_dim, generator=g)
    z = torch.randn(batch, hp.noise_dim, generator=g)
    return eps, z


@contextmanager
def inference_mode(*modules: torch.nn.Module):
    was = [m.training for m in modules]
    for m in modules:
        m.eval()
    try:
        with torch.no_grad():
            yield
    finally:
        for m, w in zip(modules, was):
            m.train(w)


def generate(gen: Generator, base: torch.Tensor, phi: torch.Tensor,
             z: torch.Tensor, eps: torch.Tensor,
             override: SwitchOverride = LEARNED) -> GenOutput:
    """Deterministic eval-mode generation from explicit latents."""
    with inference_mode(gen):
        ca = gen.ca(phi, epsilon=eps)
        return gen(base, ca.c_hat, z, override=override)


# ------------------------------------------------------------------- grids

def tensor_to_pil(t: torch.Tensor) -> Image.Image:
    t = t.detach().cpu()
    if t.shape[0] == 3:
        arr = ((t.clamp(-1, 1) + 1.0) * 127.5).round().to(torch.uint8)
        return Image.fromarray(arr.permute(1, 2, 0).numpy(), "RGB")
    arr = (t[0].clamp(0, 1) * 255).round().to(torch.uint8)
    return Image.fromarray(arr.numpy(), "L").convert("RGB")


def save_grid(path: str | Path, entries: Sequence[tuple[str, torch.Tensor]],
              label_height: int = 12):
    """One row per call: labeled cells side by side."""
    if not entries:
        raise ValueError("empty grid")
    cells = [(label, tensor_to_pil(t)) for label, t in entries]
    w, h = cells[0][1].size
    canvas = Image.new("RGB", (w * len(cells), h + label_height), "black")
    drawer = ImageDraw.Draw(canvas)
    for i, (label, img) in enumerate(cells):
        drawer.text((i * w + 2, 1), label, fill="white")
        canvas.paste(img, (i * w, label_height))
    canvas.save(path)


# -------------------------------------------------------------- sweeps

def run_interpolation(gen: Generator, base: torch.Tensor, phi1: torch.Tensor,
                      phi2: torch.Tensor, z: Optional[torch.Tensor] = None,
                      steps: int = 8, seed: int = 0,
                      eps: Optional[torch.Tensor] = None,
                      out_dir: Optional[str | Path] = None) -> dict:
    """Generate along the line between two text embeddings with frozen
    (z, epsilon); endpoints must reproduce direct generation bit-exactly."""
    if steps < 2:
        raise ValueError("interpolation needs at least 2 steps")
    if z is None or eps is None:
        d_eps, d_z = draw_latents(gen.hp, base.shape[0], seed)
        eps = d_eps if eps is None else eps
        z = d_z if z is None else z
    alphas = [i / (steps - 1) for i in range(steps)]
    outputs = []
    for a in alphas:
        phi = torch.from_numpy(interpolate(phi1.numpy(), phi2.numpy(), a))
        outputs.append(generate(gen, base, phi, z, eps))
    direct1 = generate(gen, base, phi1, z, eps)
    direct2 = generate(gen, base, phi2, z, eps)
    deltas = [float((outputs[i + 1].image - outputs[i].image).norm())
              for i in range(steps - 1)]
    finite = all(bool(torch.isfinite(o.image).all() and torch.isfinite(o.mask).all())
                 for o in outputs)
    metrics = {
        "experiment": "interpolation",
        "seed": seed,
        "inputs": {"steps": steps},
        "values": {
            "alphas": alphas,
            "step_l2_deltas": deltas,
            "max_delta": max(deltas),
            "median_delta": float(np.median(deltas)),
            "endpoint_0_bit_equal": bool(torch.equal(outputs[0].image, direct1.image)
                                         and torch.equal(outputs[0].mask, direct1.mask)),
            "endpoint_1_bit_equal": bool(torch.equal(outputs[-1].image, direct2.image)
                                         and torch.equal(outputs[-1].mask, direct2.mask)),
            "finite": finite,
        },
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_grid(out / "interpolation.png",
                  [(f"a={a:.2f}", o.image[0]) for a, o in zip(alphas, outputs)])
        write_metrics(out / "interpolation_metrics.json", metrics)
    metrics["outputs"] = outputs  # not serialized; for callers and tests
    return metrics


def run_noise_sweep(gen: Generator, base: torch.Tensor, phi: torch.Tensor,
                    steps: int = 8, seed: int = 0,
                    out_dir: Optional[str | Path] = None) -> dict:
    """Sweep z linearly from the all-zero to the all-one vector under a fixed
    (base, text) pair."""
    eps, _ = draw_latents(gen.hp, base.shape[0], seed)
    alphas = [i / (steps - 1) for i in range(steps)] if steps > 1 else [0.0]
    outputs = []
    for a in alphas:
        z = torch.full((base.shape[0], gen.hp.noise_dim), float(a))
        outputs.append(generate(gen, base, phi, z, eps))
    finite = all(bool(torch.isfinite(o.image).all() and torch.isfinite(o.mask).all())
                 for o in outputs)
    in_range = all(bool((o.image.abs() <= 1).all()
                        and (o.mask >= 0).all() and (o.mask <= 1).all())
                   for o in outputs)
    metrics = {
        "experiment": "noise_sweep",
        "seed": seed,
        "inputs": {"steps": steps},
        "values": {"alphas": alphas, "finite": finite, "in_range": in_range},
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_grid(out / "noise_sweep.png",
                  [(f"z={a:.2f}", o.image[0]) for a, o in zip(alphas, outputs)])
        write_metrics(out / "noise_sweep_metrics.json", metrics)
    metrics["outputs"] = outputs
    return metrics


SWITCH_SWEEP_MODES = (("off", SwitchOverride.constant(0.0)),
                      ("half", SwitchOverride.constant(0.5)),
                      ("on", SwitchOverride.constant(1.0)),
                      ("learned", LEARNED))


def run_switch_sweep(gen: Generator, base: torch.Tensor, phi: torch.Tensor,
                     z: Optional[torch.Tensor] = None, seed: int = 0,
                     eps: Optional[torch.Tensor] = None,
                     out_dir: Optional[str | Path] = None) -> dict:
    """Generate with the switches forced to 0, 0.5, 1 and left learned, then
    compare each output to the base over the background region of the
    learned-mode mask."""
    if z is None or eps is None:
        d_eps, d_z = draw_latents(gen.hp, base.shape[0], seed)
        eps = d_eps if eps is None else eps
        z = d_z if z is None else z
    outputs = {name: generate(gen, base, phi, z, eps, override=ov)
               for name, ov in SWITCH_SWEEP_MODES}
    selector = background_selector(outputs["learned"].mask)
    sel_pixels = float(selector.sum())
    bg_l1 = {}
    bg_l1_per_pixel = {}
    for name, out in outputs.items():
        total = float(l1_background(out.image, base, selector))
        bg_l1[name] = total
        denom = max(sel_pixels * 3.0 / base.shape[0], 1.0)
        bg_l1_per_pixel[name] = total / denom
    metrics = {
        "experiment": "switch_sweep",
        "seed": seed,
        "inputs": {"modes": [name for name, _ in SWITCH_SWEEP_MODES]},
        "values": {
            "background_l1": bg_l1,
            "background_l1_per_pixel": bg_l1_per_pixel,
            "selector_pixels": sel_pixels,
        },
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_grid(out / "switch_sweep.png",
                  [(name, outputs[name].image[0]) for name, _ in SWITCH_SWEEP_MODES])
        save_grid(out / "switch_sweep_masks.png",
                  [(name, outputs[name].mask[0]) for name, _ in SWITCH_SWEEP_MODES])
        write_metrics(out / "switch_sweep_metrics.json", metrics)
    metrics["outputs"] = outputs
    return metrics


# ------------------------------------------------------- switch statistics

def switch_mask_stats(switches: torch.Tensor, true_mask: torch.Tensor) -> dict:
    """Mean switch activation inside and outside the object region.

    ``switches``: (B, C, h, w) applied switch map (any block resolution);
    ``true_mask``: (B, 1, H, W) binary object mask.  The channel-mean switch
    is nearest-resized to mask resolution and pooled over the batch.  An
    empty region reports None for its mean.
    """
    if switches.dim() != 4 or true_mask.dim() != 4:
        raise ValueError("switches and mask must be 4-D")
    mean_map = switches.mean(dim=1, keepdim=True)
    if mean_map.shape[2:] != true_mask.shape[2:]:
        mean_map = F.interpolate(mean_map, size=true_mask.shape[2:], mode="nearest")
    inside = true_mask > 0.5
    n_in = int(inside.sum())
    n_out = int((~inside).sum())
    mean_in = float(mean_map[inside].mean()) if n_in else None
    mean_out = float(mean_map[~inside].mean()) if n_out else None
    gap = (mean_in - mean_out) if (n_in and n_out) else None
    return {"mean_in": mean_in, "mean_out": mean_out, "gap": gap,
            "pixels_in": n_in, "pixels_out": n_out}


# ------------------------------------------------- toy evaluation helpers

def color_threshold_detect(image: torch.Tensor, color: Sequence[float],
                           tol: float = 0.4) -> torch.Tensor:
    """Pixels within ``tol`` (RGB euclidean, unit range) of ``color``.

    Toy backgrounds are clipped to [0.35, 0.65] per channel, which keeps
    every background pixel at distance > tol from all palette colors."""
    img01 = (image.clamp(-1, 1) + 1.0) / 2.0
    target = torch.tensor(color, dtype=img01.dtype).view(1, 3, 1, 1)
    if img01.dim() == 3:
        img01 = img01.unsqueeze(0)
    dist = (img01 - target).square().sum(dim=1, keepdim=True).sqrt()
    return (dist < tol).float()


def mask_iou(a: torch.Tensor, b: torch.Tensor) -> float:
    a = a > 0.5
    b = b > 0.5
    union = float((a | b).sum())
    if union == 0:
        return 1.0
    return float((a & b).sum()) / union


def _batched(samples: Sequence[SceneSample], size: int):
    for i in range(0, len(samples) - len(samples) % size, size):
        yield samples[i:i + size]


def evaluate_background_l1(gen: Generator, samples: Sequence[SceneSample],
                           seed: int = 0, batch_size: int = 32) -> dict:
    """Background reconstruction quality on held-out bases: fakes are painted
    onto each sample's clean background and compared to it over the eroded
    complement of the generated mask.  Reports the per-selected-pixel mean
    (area-invariant) and the raw per-batch sum."""
    totals, pixels, sums = 0.0, 0.0, []
    for batch in _batched(samples, batch_size):
        base = torch.stack([s.background for s in batch])
        phi = torch.stack([s.embedding for s in batch])
        eps, z = draw_latents(gen.hp, len(batch), seed)
        out = generate(gen, base, phi, z, eps)
        selector = background_selector(out.mask)
        diff = ((out.image - base).abs() * selector).sum()
        totals += float(diff)
        pixels += float(selector.sum()) * 3.0
        sums.append(float(diff) / len(batch))
    return {"per_pixel": totals / max(pixels, 1.0),
            "per_batch_sum": float(np.mean(sums)) if sums else 0.0,
            "selected_pixels": pixels}


def evaluate_switch_gap(gen: Generator, samples: Sequence[SceneSample],
                        seed: int = 0, batch_size: int = 32) -> dict:
    """Pooled switch statistics over held-out fakes, using each fake's own
    binarized mask as the object region."""
    acc_in, n_in, acc_out, n_out = 0.0, 0, 0.0, 0
    for batch in _batched(samples, batch_size):
        base = torch.stack([s.background for s in batch])
        phi = torch.stack([s.embedding for s in batch])
        eps, z = draw_latents(gen.hp, len(batch), seed)
        out = generate(gen, base, phi, z, eps)
        mean_map = out.switches[-1].mean(dim=1, keepdim=True)
        mean_map = F.interpolate(mean_map, size=out.mask.shape[2:], mode="nearest")
        inside = out.mask > 0.5
        acc_in += float(mean_map[inside].sum())
        n_in += int(inside.sum())
        acc_out += float(mean_map[~inside].sum())
        n_out += int((~inside).sum())
    mean_in = acc_in / n_in if n_in else None
    mean_out = acc_out / n_out if n_out else None
    gap = (mean_in - mean_out) if (n_in and n_out) else None
    return {"mean_in": mean_in, "mean_out": mean_out, "gap": gap,
            "pixels_in": n_in, "pixels_out": n_out}


def evaluate_detector_iou(gen: Generator, samples: Sequence[SceneSample],
                          colors: Sequence[Sequence[float]], seed: int = 0,
                          batch_size: int = 32, tol: float = 0.4) -> dict:
    """Mean IoU between generated masks and a color-threshold detector run on
    the generated images, each sample judged against its conditioned color.

    A sample where both the mask and the detector output are empty scores 0,
    not the vacuous 1: a model that paints nothing must not pass."""
    ious = []
    empty_pairs = 0
    offset = 0
    for batch in _batched(samples, batch_size):
        base = torch.stack([s.background for s in batch])
        phi = torch.stack([s.embedding for s in batch])
        eps, z = draw_latents(gen.hp, len(batch), seed)
        out = generate(gen, base, phi, z, eps)
        for i in range(len(batch)):
            detected = color_threshold_detect(out.image[i], colors[offset + i], tol)
            mask = out.mask[i:i + 1] > 0.5
            if not bool(mask.any()) and not bool((detected > 0.5).any()):
                empty_pairs += 1
                ious.append(0.0)
            else:
                ious.append(mask_iou(mask, detected))
        offset += len(batch)
    return {"mean_iou": float(np.mean(ious)) if ious else 0.0,
            "min_iou": float(np.min(ious)) if ious else 0.0,
            "empty_pair_frac": empty_pairs / len(ious) if ious else 1.0,
            "count": len(ious)}

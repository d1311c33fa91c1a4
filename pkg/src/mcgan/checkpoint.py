"""Checkpoint directory format.

A checkpoint is a directory holding:

  manifest.json       -- format version, hyperparams, channel plan, variant
                         flags, batch-norm mode
  tensors.bin         -- every floating tensor as little-endian float32,
                         packed back to back in index order
  tensors.index.json  -- per tensor: name, shape, byte offset; integer-typed
                         tensors (batch-norm step counters) are stored inline
                         as exact JSON values instead of blob entries
  train_state.json    -- optional: counters, optimizer scalars, RNG states

Tensor names are namespaced ("generator/...", "discriminator/...",
"optim_g/...", "optim_d/...").
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .config import Hyperparams

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, hp: Hyperparams,
                    tensors: dict[str, torch.Tensor],
                    train_state: Optional[dict] = None,
                    bn_mode: str = "eval"):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    index = []
    blob_parts = []
    offset = 0
    for name in sorted(tensors):
        t = tensors[name].detach().cpu()
        if t.dtype.is_floating_point:
            raw = t.to(torch.float32).numpy().astype("<f4").tobytes(order="C")
            index.append({"name": name, "shape": list(t.shape), "offset": offset})
            blob_parts.append(raw)
            offset += len(raw)
        else:
            # exact integers (e.g. BN batch counters) go inline
            index.append({"name": name, "shape": list(t.shape),
                          "dtype": str(t.dtype).replace("torch.", ""),
                          "values": t.reshape(-1).tolist()})
    (path / "tensors.bin").write_bytes(b"".join(blob_parts))
    (path / "tensors.index.json").write_text(
        json.dumps(index, sort_keys=True, separators=(",", ":")) + "\n")
    manifest = {
        "format_version": FORMAT_VERSION,
        "hyperparams": hp.to_dict(),
        "channel_plan": hp.channel_plan,
        "variant": {"with_mask": hp.with_mask, "stacked": hp.stacked},
        "bn_mode": bn_mode,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if train_state is not None:
        (path / "train_state.json").write_text(
            json.dumps(train_state, sort_keys=True, separators=(",", ":")) + "\n")


def load_checkpoint(path: str | Path) -> tuple[Hyperparams, dict[str, torch.Tensor], Optional[dict]]:
    path = Path(path)
    manifest_file = path / "manifest.json"
    if not manifest_file.exists():
        raise CheckpointError(f"{path}: not a checkpoint directory (no manifest.json)")
    manifest = json.loads(manifest_file.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version "
                              f"{manifest.get('format_version')}")
    hp = Hyperparams.from_dict(manifest["hyperparams"])
    blob = (path / "tensors.bin").read_bytes()
    index = json.loads((path / "tensors.index.json").read_text())
    tensors: dict[str, torch.Tensor] = {}
    for entry in index:
        name, shape = entry["name"], entry["shape"]
        if "offset" in entry:
            n = int(np.prod(shape)) if shape else 1
            start = entry["offset"]
            end = start + 4 * n
            if end > len(blob):
                raise CheckpointError(f"{path}: blob truncated at tensor {name!r}")
            arr = np.frombuffer(blob[start:end], dtype="<f4").reshape(shape).copy()
            tensors[name] = torch.from_numpy(arr)
        else:
            dtype = getattr(torch, entry["dtype"])
            tensors[name] = torch.tensor(entry["values"], dtype=dtype).reshape(shape)
    train_state = None
    state_file = path / "train_state.json"
    if state_file.exists():
        train_state = json.loads(state_file.read_text())
    return hp, tensors, train_state


def namespace(prefix: str, state_dict: dict[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    return {f"{prefix}/{k}": v for k, v in state_dict.items()}


def select_namespace(tensors: dict[str, torch.Tensor], prefix: str) -> dict[str, torch.Tensor]:
    pre = prefix + "/"
    out = {k[len(pre):]: v for k, v in tensors.items() if k.startswith(pre)}
    if not out:
        raise CheckpointError(f"checkpoint has no tensors under {prefix!r}")
    return out


def load_module(module: torch.nn.Module, tensors: dict[str, torch.Tensor], prefix: str):
    """Load a namespaced state dict, validating shapes against the module
    built from the manifest hyperparams."""
    state = select_namespace(tensors, prefix)
    own = module.state_dict()
    for name, tensor in state.items():
        if name not in own:
            raise CheckpointError(f"unexpected tensor {prefix}/{name}")
        if tuple(own[name].shape) != tuple(tensor.shape):
            raise CheckpointError(
                f"shape mismatch for {prefix}/{name}: checkpoint "
                f"{tuple(tensor.shape)} vs model {tuple(own[name].shape)}")
        state[name] = tensor.to(own[name].dtype)
    missing = set(own) - set(state)
    if missing:
        raise CheckpointError(f"checkpoint missing tensors under {prefix!r}: {sorted(missing)[:5]}")
    module.load_state_dict(state)


def flatten_adam(optim: torch.optim.Adam,
                 named_params: list[tuple[str, torch.nn.Parameter]]) -> tuple[dict[str, torch.Tensor], dict]:
    """Split Adam state into float tensors (for the blob) and exact scalars
    (for train_state.json)."""
    tensors: dict[str, torch.Tensor] = {}
    steps: dict[str, int] = {}
    for name, p in named_params:
        st = optim.state.get(p)
        if not st:
            continue
        tensors[f"{name}/exp_avg"] = st["exp_avg"]
        tensors[f"{name}/exp_avg_sq"] = st["exp_avg_sq"]
        step = st["step"]
        steps[name] = int(step.item() if torch.is_tensor(step) else step)
    meta = {"steps": steps, "lr": optim.param_groups[0]["lr"],
            "betas": list(optim.param_groups[0]["betas"])}
    return tensors, meta


def restore_adam(optim: torch.optim.Adam,
                 named_params: list[tuple[str, torch.nn.Parameter]],
                 tensors: dict[str, torch.Tensor], meta: dict):
    optim.param_groups[0]["lr"] = meta["lr"]
    optim.param_groups[0]["betas"] = tuple(meta["betas"])
    steps = meta["steps"]
    for name, p in named_params:
        if name not in steps:
            continue
        optim.state[p] = {
            "step": torch.tensor(float(steps[name])),
            "exp_avg": tensors[f"{name}/exp_avg"].clone(),
            "exp_avg_sq": tensors[f"{name}/exp_avg_sq"].clone(),
        }

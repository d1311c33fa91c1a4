"""Command-line entry points.

The experiment subcommands accept toy attributes as compact
``shape:color:size`` tokens (e.g. ``ellipse:red:medium``); colors are palette
names.  When no base image is supplied, a procedural toy background is used
so every command runs without assets on disk.
"""
from __future__ import annotations

import base64
import io
import json
from pathlib import Path

import click
import numpy as np
import torch

from .config import DataConfig, Hyperparams, RunConfig, toy_hyperparams
from .data import load_image_png, ManifestDataset, DatasetManifest
from .embeddings import AttributeSpec, toy_encode
from .experiments import (evaluate_switch_gap, run_interpolation,
                          run_noise_sweep, run_switch_sweep, write_metrics)
from .service import ModelRuntime, handle_generate
from .toydata import PALETTE, ToyDataset, make_background, write_toy_dataset
from .training import Trainer


def parse_attrs(token: str, embed_dim: int) -> tuple[AttributeSpec, np.ndarray]:
    parts = token.split(":")
    if len(parts) != 3:
        raise click.BadParameter(f"expected shape:color:size, got {token!r}")
    shape, color, size = parts
    if color not in PALETTE:
        raise click.BadParameter(f"color must be one of {sorted(PALETTE)}")
    attrs = AttributeSpec(shape=shape, color=PALETTE[color], size=size)
    return attrs, toy_encode(attrs, embed_dim)


def load_base(path: str | None, hp: Hyperparams, seed: int) -> torch.Tensor:
    if path:
        return load_image_png(path, hp.width, hp.height).unsqueeze(0)
    bg = make_background(np.random.default_rng(seed), hp.width, hp.height)
    return torch.from_numpy(bg * 2.0 - 1.0).unsqueeze(0)


def build_dataset(data_cfg: DataConfig, hp: Hyperparams, seed: int):
    if data_cfg.kind == "toy":
        train = ToyDataset(data_cfg.train_count, hp.width, hp.height,
                           hp.embed_dim, seed=seed)
        val = ToyDataset(data_cfg.val_count, hp.width, hp.height,
                         hp.embed_dim, seed=seed + 1, prefix="toyval")
        return train, val
    manifest = DatasetManifest.load(data_cfg.manifest)
    return (ManifestDataset(manifest, hp.width, hp.height, "train"),
            ManifestDataset(manifest, hp.width, hp.height, "test"))


@click.group()
def main():
    """Text- and background-conditioned object synthesis toolkit."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="RunConfig JSON; defaults to the toy preset.")
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--epochs", type=int, default=None, help="Override epoch count.")
@click.option("--seed", type=int, default=None, help="Override training seed.")
@click.option("--resume", type=click.Path(exists=True), default=None,
              help="Checkpoint directory to resume from.")
@click.option("--deterministic/--no-deterministic", default=None)
def train(config_path, out_dir, epochs, seed, resume, deterministic):
    """Train a model and write checkpoints plus an NDJSON loss log."""
    if config_path:
        run_cfg = RunConfig.load(config_path)
    else:
        run_cfg = RunConfig(model=toy_hyperparams())
    if seed is not None:
        run_cfg.train.seed = seed
    if epochs is not None:
        run_cfg.train.epochs = epochs
    if deterministic is not None:
        run_cfg.train.deterministic = deterministic
    if resume:
        # The checkpoint owns the model shape; the config only supplies the
        # data source.
        from .checkpoint import load_checkpoint
        hp, _, train_state = load_checkpoint(resume)
        if train_state is not None:
            run_cfg.train.seed = train_state["train_config"].get(
                "seed", run_cfg.train.seed)
        train_ds, val_ds = build_dataset(run_cfg.data, hp, run_cfg.train.seed)
        trainer = Trainer.resume(resume, train_ds, out_dir, val_dataset=val_ds)
    else:
        train_ds, val_ds = build_dataset(run_cfg.data, run_cfg.model,
                                         run_cfg.train.seed)
        trainer = Trainer(run_cfg.model, run_cfg.train, train_ds, out_dir,
                          val_dataset=val_ds)
        RunConfig(model=trainer.hp, train=trainer.cfg,
                  data=run_cfg.data).save(Path(out_dir) / "run_config.json")
    trainer.run(epochs)
    click.echo(f"final checkpoint: {Path(out_dir) / 'checkpoint-final'}")


@main.command("make-toy-data")
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--count", type=int, default=2000, show_default=True)
@click.option("--width", type=int, default=64, show_default=True)
@click.option("--height", type=int, default=64, show_default=True)
@click.option("--embed-dim", type=int, default=128, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def make_toy_data(out_dir, count, width, height, embed_dim, seed):
    """Write a self-contained toy dataset directory."""
    manifest = write_toy_dataset(out_dir, count, width, height, embed_dim, seed)
    click.echo(f"wrote {len(manifest.records)} records to {out_dir}")


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--base", "base_path", required=True, type=click.Path(exists=True),
              help="Full base image (PNG).")
@click.option("--bbox", required=True, help="x,y,w,h in base-image pixels.")
@click.option("--attrs", required=True, help="shape:color:size")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--mode", type=click.Choice(["full_paste", "mask_blend"]),
              default="full_paste", show_default=True)
@click.option("--debug", is_flag=True, help="Also write per-block switch maps.")
@click.option("--out-dir", required=True, type=click.Path())
def generate(checkpoint, base_path, bbox, attrs, seed, mode, debug, out_dir):
    """Paint an object into a bounding box of a base image."""
    runtime = ModelRuntime.from_checkpoint(checkpoint)
    try:
        x, y, w, h = (int(v) for v in bbox.split(","))
    except ValueError:
        raise click.BadParameter("bbox must be x,y,w,h")
    spec, _ = parse_attrs(attrs, runtime.hp.embed_dim)
    request = {
        "base_png": base64.b64encode(Path(base_path).read_bytes()).decode("ascii"),
        "bbox": {"x": x, "y": y, "w": w, "h": h},
        "text": {"attrs": {"shape": spec.shape, "color": list(spec.color),
                           "size": spec.size}},
        "seed": seed,
        "mode": mode,
        "return_debug": debug,
    }
    response = handle_generate(runtime, request)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for key in ("composite_png", "crop_png", "mask_png"):
        (out / key.replace("_png", ".png")).write_bytes(
            base64.b64decode(response[key]))
    for i, png in enumerate(response.get("switch_pngs", [])):
        (out / f"switch_{i}.png").write_bytes(base64.b64decode(png))
    click.echo(f"composite written to {out / 'composite.png'} "
               f"({response['timing_ms']:.0f} ms)")


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--base", "base_path", type=click.Path(exists=True), default=None)
@click.option("--from", "attrs_from", required=True, help="shape:color:size")
@click.option("--to", "attrs_to", required=True, help="shape:color:size")
@click.option("--steps", type=int, default=8, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", required=True, type=click.Path())
def interpolate(checkpoint, base_path, attrs_from, attrs_to, steps, seed, out_dir):
    """Sweep the text embedding between two attribute descriptions."""
    runtime = ModelRuntime.from_checkpoint(checkpoint)
    hp = runtime.hp
    _, phi1 = parse_attrs(attrs_from, hp.embed_dim)
    _, phi2 = parse_attrs(attrs_to, hp.embed_dim)
    base = load_base(base_path, hp, seed)
    metrics = run_interpolation(runtime.gen, base,
                                torch.from_numpy(phi1).unsqueeze(0),
                                torch.from_numpy(phi2).unsqueeze(0),
                                steps=steps, seed=seed, out_dir=out_dir)
    click.echo(json.dumps(metrics["values"], indent=2))


@main.command("noise-sweep")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--base", "base_path", type=click.Path(exists=True), default=None)
@click.option("--attrs", required=True, help="shape:color:size")
@click.option("--steps", type=int, default=8, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", required=True, type=click.Path())
def noise_sweep(checkpoint, base_path, attrs, steps, seed, out_dir):
    """Sweep the noise vector from all-zero to all-one."""
    runtime = ModelRuntime.from_checkpoint(checkpoint)
    _, phi = parse_attrs(attrs, runtime.hp.embed_dim)
    base = load_base(base_path, runtime.hp, seed)
    metrics = run_noise_sweep(runtime.gen, base, torch.from_numpy(phi).unsqueeze(0),
                              steps=steps, seed=seed, out_dir=out_dir)
    click.echo(json.dumps(metrics["values"], indent=2))


@main.command("switch-sweep")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--base", "base_path", type=click.Path(exists=True), default=None)
@click.option("--attrs", required=True, help="shape:color:size")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", required=True, type=click.Path())
def switch_sweep(checkpoint, base_path, attrs, seed, out_dir):
    """Generate with switches forced to 0, 0.5, 1 and learned."""
    runtime = ModelRuntime.from_checkpoint(checkpoint)
    _, phi = parse_attrs(attrs, runtime.hp.embed_dim)
    base = load_base(base_path, runtime.hp, seed)
    metrics = run_switch_sweep(runtime.gen, base,
                               torch.from_numpy(phi).unsqueeze(0),
                               seed=seed, out_dir=out_dir)
    click.echo(json.dumps(metrics["values"], indent=2))


@main.command("switch-stats")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--count", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", required=True, type=click.Path())
def switch_stats(checkpoint, count, seed, out_dir):
    """Switch activation statistics on freshly generated toy scenes."""
    runtime = ModelRuntime.from_checkpoint(checkpoint)
    hp = runtime.hp
    ds = ToyDataset(count, hp.width, hp.height, hp.embed_dim,
                    seed=seed + 1, prefix="stats")
    stats = evaluate_switch_gap(runtime.gen, ds.samples, seed=seed,
                                batch_size=min(32, count))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(out / "switch_stats_metrics.json",
                  {"experiment": "switch_stats", "seed": seed,
                   "inputs": {"count": count}, "values": stats})
    click.echo(json.dumps(stats, indent=2))


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8765, show_default=True)
@click.option("--embeddings", type=click.Path(exists=True), default=None,
              help="Embedding table for row-referenced captions.")
def serve(checkpoint, host, port, embeddings):
    """Serve the inference HTTP API from a checkpoint."""
    from .service import serve as run_server
    run_server(checkpoint, host=host, port=port, embeddings=embeddings)


if __name__ == "__main__":
    main()

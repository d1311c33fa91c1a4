"""Checkpoint-backed inference over HTTP and the paste-back composition step.

The request seed drives one torch.Generator that yields epsilon then z, so an
identical request against the same checkpoint returns identical bytes.  A
single model instance serves requests behind a lock; composition happens on
the caller thread.
"""
import base64
import io
import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .checkpoint import load_checkpoint, load_module
from .config import Hyperparams
from .embeddings import AttributeSpec, EmbeddingTable, toy_encode
from .experiments import draw_latents, generate
from .losses import erode
from .models import GenOutput, Generator, SwitchOverride, LEARNED


class RequestError(ValueError):
    """Maps to HTTP 400."""


class UnknownEmbeddingError(KeyError):
    """Maps to HTTP 404."""


@dataclass
class Bbox:
    x: int
    y: int
    w: int
    h: int

    @classmethod
    def parse(cls, doc, image_w: int, image_h: int) -> "Bbox":
        if not isinstance(doc, dict):
            raise RequestError("bbox must be an object {x, y, w, h}")
        try:
            box = cls(int(doc["x"]), int(doc["y"]), int(doc["w"]), int(doc["h"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise RequestError(f"malformed bbox: {exc}") from exc
        if box.w < 8 or box.h < 8:
            raise RequestError("bbox sides must be at least 8 pixels")
        if box.x < 0 or box.y < 0 or box.x + box.w > image_w or box.y + box.h > image_h:
            raise RequestError("bbox lies outside the image")
        return box


def _feather(mask: torch.Tensor, radius: int) -> torch.Tensor:
    out = mask
    for _ in range(radius):
        out = F.avg_pool2d(F.pad(out, (1, 1, 1, 1), mode="replicate"), 3, stride=1)
    return out


def compose(base: np.ndarray, bbox: Bbox, gen_out: GenOutput,
            mode: str = "full_paste", feather: int = 2,
            change_threshold: float = 0.1) -> np.ndarray:
    """Paste the generated crop into the base image.

    full_paste replaces the bbox region with the resized crop.  mask_blend
    alpha-blends through the eroded-then-feathered generated mask, unioned
    with pixels the generator visibly changed (so synthesized background
    structure survives).  Pixels outside the bbox are never touched.
    """
    if mode not in ("full_paste", "mask_blend"):
        raise RequestError(f"unknown composition mode {mode!r}")
    h_img, w_img = base.shape[:2]
    composite = base.copy()
    region = base[bbox.y:bbox.y + bbox.h, bbox.x:bbox.x + bbox.w]
    region01 = torch.from_numpy(region.astype(np.float32) / 255.0).permute(2, 0, 1)
    crop01 = (gen_out.image[0].clamp(-1, 1) + 1.0) / 2.0
    crop01 = F.interpolate(crop01.unsqueeze(0), size=(bbox.h, bbox.w),
                           mode="bilinear", align_corners=False)[0]
    if mode == "full_paste":
        blended = crop01
    else:
        mask = (gen_out.mask[0:1] > 0.5).float()
        mask = erode(mask, kernel=3, iterations=1)
        mask = F.interpolate(mask, size=(bbox.h, bbox.w), mode="nearest")
        alpha = _feather(mask, feather)[0]
        changed = ((crop01 - region01).abs().amax(dim=0, keepdim=True)
                   > change_threshold).float()
        alpha = torch.maximum(alpha, changed)
        blended = alpha * crop01 + (1.0 - alpha) * region01
    patch = (blended.clamp(0, 1) * 255.0).round().to(torch.uint8)
    composite[bbox.y:bbox.y + bbox.h, bbox.x:bbox.x + bbox.w] = (
        patch.permute(1, 2, 0).numpy())
    return composite


def _png_bytes(arr: np.ndarray, mode: str = "RGB") -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr, mode).save(buf, format="PNG")
    return buf.getvalue()


def _b64png(arr: np.ndarray, mode: str = "RGB") -> str:
    return base64.b64encode(_png_bytes(arr, mode)).decode("ascii")


def _tensor_to_uint8(img: torch.Tensor) -> np.ndarray:
    return (((img.clamp(-1, 1) + 1.0) * 127.5).round()
            .to(torch.uint8).permute(1, 2, 0).numpy())


def _gray_to_uint8(m: torch.Tensor) -> np.ndarray:
    return (m.clamp(0, 1) * 255.0).round().to(torch.uint8).numpy()


class ModelRuntime:
    """A loaded generator plus its embedding source, serialized by a lock."""

    def __init__(self, hp: Hyperparams, gen: Generator,
                 table: Optional[EmbeddingTable] = None,
                 checkpoint_path: Optional[str] = None):
        self.hp = hp
        self.gen = gen.eval()
        self.table = table
        self.checkpoint_path = checkpoint_path
        self.lock = threading.Lock()

    @classmethod
    def from_checkpoint(cls, path: str | Path,
                        embeddings: Optional[str | Path] = None) -> "ModelRuntime":
        hp, tensors, _ = load_checkpoint(path)
        gen = Generator(hp)
        load_module(gen, tensors, "generator")
        table = None
        if embeddings is not None:
            table = EmbeddingTable.load(embeddings, expected_dim=hp.embed_dim)
        return cls(hp, gen, table, checkpoint_path=str(path))

    def resolve_text(self, doc) -> torch.Tensor:
        """Request text -> (1, E) embedding. attrs for toy models, an
        embedding row reference when a table is loaded."""
        if not isinstance(doc, dict):
            raise RequestError("text must be an object with 'attrs' or 'row'")
        if "attrs" in doc:
            attrs = doc["attrs"]
            try:
                color = attrs["color"]
                if isinstance(color, str):
                    from .toydata import PALETTE
                    if color not in PALETTE:
                        raise UnknownEmbeddingError(f"unknown palette color {color!r}")
                    color = PALETTE[color]
                spec = AttributeSpec(shape=attrs["shape"], color=tuple(color),
                                     size=attrs["size"])
            except UnknownEmbeddingError:
                raise
            except Exception as exc:
                raise RequestError(f"malformed attrs: {exc}") from exc
            return torch.from_numpy(toy_encode(spec, self.hp.embed_dim)).unsqueeze(0)
        if "row" in doc:
            if self.table is None:
                raise UnknownEmbeddingError("no embedding table loaded")
            row = doc["row"]
            if not isinstance(row, int) or not 0 <= row < self.table.count:
                raise UnknownEmbeddingError(f"embedding row {row!r} not in table")
            return torch.from_numpy(self.table.row(row).copy()).unsqueeze(0)
        raise RequestError("text must contain 'attrs' or 'row'")

    def generate_crop(self, base01: torch.Tensor, phi: torch.Tensor, seed: int,
                      override: SwitchOverride = LEARNED) -> GenOutput:
        hp = self.hp
        model_in = F.interpolate(base01.unsqueeze(0) * 2.0 - 1.0,
                                 size=(hp.height, hp.width),
                                 mode="bilinear", align_corners=False)
        eps, z = draw_latents(hp, 1, seed)
        with self.lock:
            return generate(self.gen, model_in, phi, z, eps, override=override)

    def model_summary(self) -> dict:
        return {
            "loaded": True,
            "checkpoint": self.checkpoint_path,
            "hyperparams": self.hp.to_dict(),
            "channel_plan": self.hp.channel_plan,
            "variant": {"with_mask": self.hp.with_mask, "stacked": self.hp.stacked},
            "embedding_table": None if self.table is None else
                {"count": self.table.count, "dim": self.table.dim},
        }

    def embeddings_summary(self) -> dict:
        if self.table is not None:
            return {"kind": "table", "count": self.table.count,
                    "dim": self.table.dim,
                    "image_ids": sorted(self.table.index)[:200]}
        from .toydata import PALETTE, SIZE_FRACTION
        from .embeddings import SHAPES, SIZES
        return {"kind": "toy_attributes",
                "shapes": list(SHAPES),
                "colors": {name: list(rgb) for name, rgb in PALETTE.items()},
                "sizes": list(SIZES),
                "size_fractions": dict(SIZE_FRACTION)}


def handle_generate(runtime: ModelRuntime, doc: dict) -> dict:
    """Validated request -> response dict with base64 PNGs.

    Raises RequestError (400) and UnknownEmbeddingError (404); anything else
    is an internal failure (500)."""
    if not isinstance(doc, dict):
        raise RequestError("request body must be a JSON object")
    t0 = time.monotonic()
    try:
        raw = base64.b64decode(doc["base_png"], validate=True)
        base_img = Image.open(io.BytesIO(raw)).convert("RGB")
    except KeyError:
        raise RequestError("missing base_png")
    except Exception as exc:
        raise RequestError(f"base_png is not a decodable PNG: {exc}") from exc
    base = np.asarray(base_img, dtype=np.uint8)
    bbox = Bbox.parse(doc.get("bbox"), base.shape[1], base.shape[0])
    phi = runtime.resolve_text(doc.get("text"))
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        raise RequestError("seed must be an integer")
    mode = doc.get("mode", "full_paste")
    try:
        override = (SwitchOverride.from_dict(doc["overrides"])
                    if "overrides" in doc else LEARNED)
    except ValueError as exc:
        raise RequestError(f"malformed overrides: {exc}") from exc
    return_debug = bool(doc.get("return_debug", False))

    region = base[bbox.y:bbox.y + bbox.h, bbox.x:bbox.x + bbox.w]
    base01 = torch.from_numpy(region.astype(np.float32) / 255.0).permute(2, 0, 1)
    out = runtime.generate_crop(base01, phi, seed, override)
    composite = compose(base, bbox, out, mode=mode)
    response = {
        "composite_png": _b64png(composite),
        "crop_png": _b64png(_tensor_to_uint8(out.image[0])),
        "mask_png": _b64png(_gray_to_uint8(out.mask[0, 0]), mode="L"),
        "seed": seed,
        "bbox": vars(bbox),
        "mode": mode,
        "timing_ms": (time.monotonic() - t0) * 1000.0,
    }
    if return_debug:
        response["switch_pngs"] = [
            _b64png(_gray_to_uint8(sw[0].mean(dim=0)), mode="L")
            for sw in out.switches]
    return response


def create_app(runtime: Optional[ModelRuntime] = None):
    from fastapi import FastAPI, HTTPException, Request
    from fastapi.responses import JSONResponse

    app = FastAPI(title="mcgan inference service")
    app.state.runtime = runtime

    @app.get("/health")
    def health():
        return {"status": "ok",
                "checkpoint_loaded": app.state.runtime is not None}

    @app.get("/model")
    def model():
        rt = app.state.runtime
        if rt is None:
            return {"loaded": False}
        return rt.model_summary()

    @app.get("/embeddings")
    def embeddings():
        rt = app.state.runtime
        if rt is None:
            raise HTTPException(status_code=409, detail="no checkpoint loaded")
        return rt.embeddings_summary()

    @app.post("/generate")
    async def generate_endpoint(request: Request):
        rt = app.state.runtime
        if rt is None:
            raise HTTPException(status_code=409, detail="no checkpoint loaded")
        try:
            doc = await request.json()
        except Exception:
            raise HTTPException(status_code=400, detail="body is not valid JSON")
        try:
            return JSONResponse(handle_generate(rt, doc))
        except RequestError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        except UnknownEmbeddingError as exc:
            raise HTTPException(status_code=404, detail=str(exc).strip("'\""))
        except HTTPException:
            raise
        except Exception as exc:  # internal failure: return a diagnostic
            raise HTTPException(status_code=500,
                                detail=f"{type(exc).__name__}: {exc}")

    return app


def serve(checkpoint: str | Path, host: str = "127.0.0.1", port: int = 8765,
          embeddings: Optional[str | Path] = None):
    import uvicorn

    runtime = ModelRuntime.from_checkpoint(checkpoint, embeddings=embeddings)
    uvicorn.run(create_app(runtime), host=host, port=port, log_level="warning")

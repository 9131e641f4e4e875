"""JSON-over-HTTP generation service.

Endpoints:
  POST /generate  GenerateRequest -> GenerateResponse (400 malformed or
                  invariant-violating, 422 undecodable PNG)
  GET  /health    status, model id, image size, knob defaults
  GET  /config    sanitized model configuration

The model is loaded once and never mutated; each request derives its own
random generator from the request seed, so identical requests produce
byte-identical images and concurrent requests cannot interfere.
"""

from __future__ import annotations

import base64
import binascii
import io
import logging
import time
import uuid

import numpy as np
from fastapi import Body, FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from PIL import Image

from .pipeline import GenerationPipeline

log = logging.getLogger(__name__)


def decode_sketch_png(png_b64: str, image_size: int) -> np.ndarray:
    """Base64 PNG (1-bit or grayscale; white = stroke) -> binary (H, W)."""
    try:
        raw = base64.b64decode(png_b64, validate=True)
    except (binascii.Error, ValueError, TypeError):
        raise HTTPException(status_code=422, detail="sketch_png_b64 is not valid base64")
    try:
        with Image.open(io.BytesIO(raw)) as im:
            gray = im.convert("L").resize((image_size, image_size), Image.BILINEAR)
    except Exception:
        raise HTTPException(status_code=422, detail="sketch_png_b64 does not decode to an image")
    return (np.asarray(gray, dtype=np.float32) >= 127.5).astype(np.uint8)


def encode_png_b64(image_hw3: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(image_hw3).save(buf, format="PNG", optimize=False, compress_level=6)
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _require_int(payload: dict, key: str, default=None):
    value = payload.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise HTTPException(status_code=400, detail=f"{key} must be an integer")
    return value


def create_app(pipeline: GenerationPipeline) -> FastAPI:
    app = FastAPI(title="sketchdial generation service")
    cfg = pipeline.config

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": "malformed request body"})

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "model_id": pipeline.model_id,
            "image_size": cfg.image_size,
            "S_default": cfg.S_default,
            "gamma_default": cfg.gamma_default,
        }

    @app.get("/config")
    def config():
        sanitized = cfg.to_dict()
        sanitized["phase"] = pipeline.phase
        sanitized["model_id"] = pipeline.model_id
        return sanitized

    @app.post("/generate")
    def generate(payload: dict = Body(...)):
        if "sketch_png_b64" not in payload or not isinstance(payload["sketch_png_b64"], str):
            raise HTTPException(status_code=400, detail="sketch_png_b64 (base64 string) is required")
        prompt = payload.get("prompt", "")
        if not isinstance(prompt, str):
            raise HTTPException(status_code=400, detail="prompt must be a string")
        steps = _require_int(payload, "steps", cfg.S_default)
        seed = _require_int(payload, "seed", 0)
        if steps < 1:
            raise HTTPException(status_code=400, detail="steps must be >= 1")

        spectrum = payload.get("return_spectrum")
        if spectrum is not None:
            if (not isinstance(spectrum, list) or not spectrum
                    or any(isinstance(g, bool) or not isinstance(g, int) for g in spectrum)):
                raise HTTPException(status_code=400, detail="return_spectrum must be a non-empty list of integers")
            if any(not 0 <= g <= steps for g in spectrum):
                raise HTTPException(status_code=400, detail=f"return_spectrum values must lie in [0, {steps}]")
            if len(set(spectrum)) != len(spectrum):
                raise HTTPException(status_code=400, detail="return_spectrum values must be unique")
            gammas = sorted(spectrum)
        else:
            gamma = _require_int(payload, "gamma", min(cfg.gamma_default, steps))
            if not 0 <= gamma <= steps:
                raise HTTPException(status_code=400, detail=f"gamma must lie in [0, {steps}]")
            gammas = [gamma]

        sketch = decode_sketch_png(payload["sketch_png_b64"], cfg.image_size)

        images, timings = [], []
        try:
            for g in gammas:
                t0 = time.perf_counter()
                img = pipeline.generate(sketch, prompt, gamma=g, steps=steps, seed=seed)
                timings.append((time.perf_counter() - t0) * 1000.0)
                images.append({"gamma": g, "png_b64": encode_png_b64(img)})
        except HTTPException:
            raise
        except Exception:
            error_id = uuid.uuid4().hex[:12]
            log.exception("generation failed (error id %s)", error_id)
            raise HTTPException(status_code=500, detail=f"internal error {error_id}")

        return {"images": images, "model_id": pipeline.model_id, "timings_ms": timings}

    return app

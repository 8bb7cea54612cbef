"""Stateless inference HTTP service.

Endpoints (JSON over HTTP/1.1):

* ``POST /api/v1/infer``   image + bounding box -> RECIST annotation
* ``GET  /api/v1/healthz`` readiness and model version

The request image is a grayscale PNG, either base64-encoded in a JSON
body (``{"image": ..., "bbox": {"x":, "y":, "w":, "h":}}``) or as the
``image`` part of a multipart form with a ``bbox`` JSON field. Response
bodies serialize with sorted keys so identical requests produce
byte-identical bytes.

Settings come from CLI flags with ``RECIST_``-prefixed environment
variables as fallback (``RECIST_CKPT``, ``RECIST_PORT``,
``RECIST_MAX_IMAGE_PX``, ``RECIST_HOST``).
"""

from __future__ import annotations

import base64
import binascii
import io
import json
import logging
import os
import time
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, Request, Response
from PIL import Image

from .errors import RecistError, ValidationError
from .inference import InferencePipeline

logger = logging.getLogger(__name__)

ENV_PREFIX = "RECIST_"
DEFAULT_MAX_IMAGE_PX = 16_000_000


@dataclass
class ServeSettings:
    ckpt: str | None = None
    host: str = "127.0.0.1"
    port: int = 8787
    max_image_px: int = DEFAULT_MAX_IMAGE_PX

    @classmethod
    def from_env(cls, **overrides) -> "ServeSettings":
        settings = cls()
        env = {
            "ckpt": os.environ.get(ENV_PREFIX + "CKPT"),
            "host": os.environ.get(ENV_PREFIX + "HOST"),
            "port": os.environ.get(ENV_PREFIX + "PORT"),
            "max_image_px": os.environ.get(ENV_PREFIX + "MAX_IMAGE_PX"),
        }
        for name, value in env.items():
            if value is not None:
                field_type = type(getattr(settings, name) or "")
                setattr(settings, name, int(value) if field_type is int else value)
        for name, value in overrides.items():
            if value is not None:
                setattr(settings, name, value)
        return settings


def _error_response(status: int, errors: list[dict]) -> Response:
    return Response(
        content=json.dumps({"errors": errors}, sort_keys=True),
        status_code=status,
        media_type="application/json",
    )


def _field_error(status: int, field: str, message: str) -> Response:
    return _error_response(status, [{"field": field, "message": message}])


def create_app(settings: ServeSettings | None = None) -> FastAPI:
    settings = settings or ServeSettings.from_env()
    app = FastAPI(title="recist", docs_url=None, redoc_url=None)
    app.state.settings = settings
    app.state.started = time.time()
    app.state.pipeline = None
    if settings.ckpt:
        try:
            app.state.pipeline = InferencePipeline.from_checkpoint(settings.ckpt)
        except (RecistError, OSError) as exc:
            logger.error("could not load checkpoint %s: %s", settings.ckpt, exc)

    @app.get("/api/v1/healthz")
    def healthz():
        pipeline: InferencePipeline | None = app.state.pipeline
        body = {
            "status": "ok" if pipeline else "unavailable",
            "model_version": pipeline.model_version if pipeline else None,
            "uptime_s": round(time.time() - app.state.started, 3),
        }
        return Response(
            content=json.dumps(body, sort_keys=True),
            status_code=200 if pipeline else 503,
            media_type="application/json",
        )

    @app.post("/api/v1/infer")
    async def infer(request: Request):
        pipeline: InferencePipeline | None = app.state.pipeline
        if pipeline is None:
            return _field_error(503, "model", "model not ready")

        content_type = request.headers.get("content-type", "")
        try:
            if content_type.startswith("multipart/form-data"):
                form = await request.form()
                if "image" not in form or "bbox" not in form:
                    return _field_error(400, "body", "need image and bbox parts")
                image_bytes = await form["image"].read()
                bbox = json.loads(form["bbox"])
            else:
                body = await request.json()
                if not isinstance(body, dict) or "image" not in body or "bbox" not in body:
                    return _field_error(400, "body", "need image and bbox fields")
                try:
                    image_bytes = base64.b64decode(body["image"], validate=True)
                except (binascii.Error, TypeError):
                    return _field_error(400, "image", "invalid base64 payload")
                bbox = body["bbox"]
        except (json.JSONDecodeError, UnicodeDecodeError):
            return _field_error(400, "body", "malformed request body")

        try:
            with Image.open(io.BytesIO(image_bytes)) as im:
                if im.width * im.height > settings.max_image_px:
                    return _field_error(
                        413,
                        "image",
                        f"{im.width}x{im.height} exceeds the "
                        f"{settings.max_image_px}px limit",
                    )
                image = np.asarray(im.convert("L"), dtype=np.uint8)
        except Exception:
            return _field_error(400, "image", "could not decode PNG image")

        try:
            result = pipeline.annotate(image, bbox)
        except ValidationError as exc:
            return _field_error(400, exc.field, exc.message)

        roles = ("long_left", "long_right", "short_top", "short_bottom")
        payload = {
            "confidence": [round(float(c), 6) for c in result.confidence],
            "endpoints": [
                {"role": role, "x": float(p[0]), "y": float(p[1])}
                for role, p in zip(roles, result.annotation.endpoints())
            ],
            "long_len_px": float(result.long_len_px),
            "low_confidence": result.low_confidence,
            "mask_contour": result.mask_contour,
            "model_version": pipeline.model_version,
            "short_len_px": float(result.short_len_px),
        }
        return Response(
            content=json.dumps(payload, sort_keys=True),
            media_type="application/json",
        )

    return app


def serve(settings: ServeSettings) -> None:
    """Run the service under uvicorn (blocking)."""
    import uvicorn

    uvicorn.run(create_app(settings), host=settings.host, port=settings.port)

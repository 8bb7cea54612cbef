"""Input validation helpers shared by the estimator and the HTTP service."""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def check_image(image) -> np.ndarray:
    """Validate a grayscale raster; returns it as a 2-D array."""
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise ValidationError("image", f"expected a 2-D grayscale raster, got shape {arr.shape}")
    if arr.size == 0:
        raise ValidationError("image", "image is empty")
    if not np.issubdtype(arr.dtype, np.number):
        raise ValidationError("image", f"non-numeric dtype {arr.dtype}")
    return arr


def check_bbox(bbox, image_shape) -> tuple[float, float, float, float]:
    """Validate an (x, y, w, h) box against the image bounds."""
    try:
        if isinstance(bbox, dict):
            x, y, w, h = (float(bbox[k]) for k in ("x", "y", "w", "h"))
        else:
            x, y, w, h = (float(v) for v in bbox)
    except (KeyError, TypeError, ValueError):
        raise ValidationError("bbox", f"expected x, y, w, h, got {bbox!r}")
    height, width = image_shape
    for name, value in (("x", x), ("y", y), ("w", w), ("h", h)):
        if not np.isfinite(value):
            raise ValidationError(f"bbox.{name}", "must be finite")
    if w <= 0:
        raise ValidationError("bbox.w", f"width must be positive, got {w}")
    if h <= 0:
        raise ValidationError("bbox.h", f"height must be positive, got {h}")
    if x < 0 or y < 0:
        raise ValidationError("bbox.x" if x < 0 else "bbox.y", "must be non-negative")
    if x + w > width:
        raise ValidationError("bbox.w", f"box right edge {x + w} exceeds image width {width}")
    if y + h > height:
        raise ValidationError("bbox.h", f"box bottom edge {y + h} exceeds image height {height}")
    return x, y, w, h

"""End-to-end inference: user bounding box in, RECIST annotation out."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from skimage import measure

from .annotation import CropRecord, RecistAnnotation, normalized_to_pixel
from .data import resize_bilinear
from .evaluation import DecodeResult, decode_keypoints
from .geometry import AffineParams
from .networks import CascadeModel, normalize_image
from .training import load_checkpoint
from .validation import check_bbox, check_image


def bbox_to_crop(bbox, image_shape, out_size: int = 128) -> CropRecord:
    """Square crop record for a user-drawn box.

    The box is expanded to a square of side max(w, h) about its center
    (the user already drew the context margin) and shifted to stay inside
    the image; boxes taller or wider than the image clamp to it.
    """
    x, y, w, h = bbox
    height, width = image_shape
    side = int(math.ceil(max(w, h)))
    clamped = False
    if side > min(height, width):
        side = min(height, width)
        clamped = True
    ox = int(round(x + w / 2.0 - side / 2.0))
    oy = int(round(y + h / 2.0 - side / 2.0))
    ox_c = int(np.clip(ox, 0, width - side))
    oy_c = int(np.clip(oy, 0, height - side))
    clamped = clamped or ox_c != ox or oy_c != oy
    return CropRecord(
        origin=(float(ox_c), float(oy_c)),
        crop_size=float(side),
        resized_to=out_size,
        clamped=clamped,
    )


@dataclass
class InferenceResult:
    """Everything the serving layer reports for one request."""

    annotation: RecistAnnotation  # original-image pixels, role-ordered
    roi_annotation: RecistAnnotation
    confidence: np.ndarray  # (4,) final-heatmap peak values
    low_confidence: bool
    theta: AffineParams | None
    mask_contour: list[tuple[float, float]] | None  # original-image pixels
    crop: CropRecord

    @property
    def long_len_px(self) -> float:
        return self.annotation.long_length

    @property
    def short_len_px(self) -> float:
        return self.annotation.short_length


def _mask_contour(mask: np.ndarray, crop: CropRecord) -> list[tuple[float, float]] | None:
    """Longest 0.5-level isoline of the mask, mapped to original pixels."""
    contours = measure.find_contours(mask.astype(np.float64), 0.5)
    if not contours:
        return None
    contour = max(contours, key=len)  # (N, 2) rows, cols in mask pixels
    hm, wm = mask.shape
    norm = np.stack(
        [2 * contour[:, 1] / (wm - 1) - 1, 2 * contour[:, 0] / (hm - 1) - 1], axis=1
    )
    roi_px = normalized_to_pixel(norm, crop.resized_to, crop.resized_to)
    original = crop.to_original(roi_px)
    return [(float(px), float(py)) for px, py in original]


class InferencePipeline:
    """A loaded model plus the crop/decode plumbing around it.

    The model is treated as immutable; ``annotate`` takes no locks and is
    safe to call from concurrent request handlers.
    """

    def __init__(self, model: CascadeModel, model_version: str = "untracked"):
        model.eval()
        self.model = model
        self.model_version = model_version
        self.roi_size = model.config.input_size

    @classmethod
    def from_checkpoint(cls, path) -> "InferencePipeline":
        ckpt = load_checkpoint(path)
        return cls(ckpt.build_model(), model_version=ckpt.version)

    def annotate(self, image, bbox) -> InferenceResult:
        """Run the cascade for one image + bounding box.

        ``image`` is a 2-D grayscale raster (uint8 or [0, 1] float);
        ``bbox`` is (x, y, w, h) or a mapping with those keys, in image
        pixels.
        """
        arr = check_image(image)
        box = check_bbox(bbox, arr.shape)
        crop = bbox_to_crop(box, arr.shape, self.roi_size)

        ox, oy = int(crop.origin[0]), int(crop.origin[1])
        side = int(crop.crop_size)
        patch = arr[oy : oy + side, ox : ox + side].astype(np.float32)
        if arr.dtype == np.uint8:
            patch = patch / 255.0
        roi = resize_bilinear(patch, self.roi_size, self.roi_size)

        with torch.no_grad():
            x = normalize_image(torch.from_numpy(roi)[None, None])
            out = self.model(x)
            theta = (
                AffineParams.from_tensor(out.theta[0])
                if out.theta is not None
                else None
            )
            decoded: DecodeResult = decode_keypoints(
                out.heatmaps[-1][0], theta, crop
            )
            contour = None
            if out.localization is not None:
                contour = _mask_contour(
                    out.localization.mask_pred[0].numpy(), crop
                )

        return InferenceResult(
            annotation=decoded.annotation,
            roi_annotation=decoded.roi_annotation,
            confidence=decoded.confidence,
            low_confidence=decoded.low_confidence,
            theta=theta,
            mask_contour=contour,
            crop=crop,
        )

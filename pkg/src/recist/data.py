"""Dataset model: manifests, ROI crops, pseudo-masks, heatmaps, synthesis.

The unit flowing through training and evaluation is a :class:`LesionSample`:
a grayscale raster plus its RECIST annotation and, once cropped, the
provenance record needed to map coordinates back to the original image.

Manifest format (UTF-8 CSV): header ``image,x1,y1,x2,y2,x3,y3,x4,y4``,
one row per sample, coordinates in original-image pixels with
(x1,y1)-(x2,y2) the long axis. Images are grayscale PNG next to the
manifest (paths resolved relative to it).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from . import geometry
from .annotation import (
    FRAME_NORMALIZED,
    FRAME_ORIGINAL,
    FRAME_ROI,
    CropRecord,
    RecistAnnotation,
    annotation_normalized_to_pixel,
    annotation_pixel_to_normalized,
)
from .errors import DegenerateAnnotationError, InvalidParameterError, ManifestError

MANIFEST_COLUMNS = ("image", "x1", "y1", "x2", "y2", "x3", "y3", "x4", "y4")
ROI_SIZE = 128


@dataclass(frozen=True)
class LesionSample:
    """One lesion: image raster, annotation, and crop provenance.

    Original-frame samples carry a uint8 image and ``crop_record=None``;
    ROI-frame samples carry a float32 image in [0, 1] plus the record of
    how the ROI was cut.
    """

    image: np.ndarray
    annotation: RecistAnnotation
    crop_record: CropRecord | None = None
    source_id: str = ""

    def validate(self) -> None:
        self.annotation.check_valid()
        h, w = self.image.shape
        pts = self.annotation.endpoints()
        if (
            pts[:, 0].min() < 0
            or pts[:, 1].min() < 0
            or pts[:, 0].max() > w - 1
            or pts[:, 1].max() > h - 1
        ):
            raise DegenerateAnnotationError(
                "annotation endpoints fall outside the image bounds"
            )


# ---------------------------------------------------------------------------
# Manifest I/O


def load_manifest(path) -> list[LesionSample]:
    """Load a dataset manifest, enforcing the long-axis-first invariant.

    Rows whose "short" pair is longer are swapped on load. Any malformed
    row raises :class:`ManifestError` carrying its 1-based row number.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    samples = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != list(MANIFEST_COLUMNS):
            raise ManifestError(
                f"bad header {header!r}, expected {','.join(MANIFEST_COLUMNS)}", row=1
            )
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 9:
                raise ManifestError(f"expected 9 fields, got {len(row)}", row=row_no)
            image_path = path.parent / row[0]
            if not image_path.is_file():
                raise ManifestError(f"image not found: {image_path}", row=row_no)
            try:
                coords = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise ManifestError(f"non-numeric coordinate: {exc}", row=row_no)
            try:
                with Image.open(image_path) as im:
                    image = np.asarray(im.convert("L"), dtype=np.uint8)
            except Exception as exc:
                raise ManifestError(f"unreadable image {image_path}: {exc}", row=row_no)
            annotation = RecistAnnotation(
                long_p1=(coords[0], coords[1]),
                long_p2=(coords[2], coords[3]),
                short_p1=(coords[4], coords[5]),
                short_p2=(coords[6], coords[7]),
                frame=FRAME_ORIGINAL,
            ).ordered()
            sample = LesionSample(
                image=image,
                annotation=annotation,
                source_id=Path(row[0]).stem,
            )
            try:
                sample.validate()
            except DegenerateAnnotationError as exc:
                raise ManifestError(str(exc), row=row_no)
            samples.append(sample)
    return samples


def save_dataset(samples, out_dir, image_dir_name="images") -> Path:
    """Write PNGs plus a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    image_dir = out_dir / image_dir_name
    image_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for i, sample in enumerate(samples):
            name = sample.source_id or f"sample-{i:05d}"
            rel = f"{image_dir_name}/{name}.png"
            img = sample.image
            if img.dtype != np.uint8:
                img = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(img, mode="L").save(out_dir / rel)
            pts = sample.annotation.endpoints()
            writer.writerow([rel] + [repr(float(v)) for v in pts.reshape(-1)])
    return manifest


# ---------------------------------------------------------------------------
# ROI cropping


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize to (out_h, out_w), float32 output."""
    in_h, in_w = image.shape
    ys = np.linspace(0, in_h - 1, out_h)
    xs = np.linspace(0, in_w - 1, out_w)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(
        image.astype(np.float32), [gy, gx], order=1, mode="nearest"
    )


def crop_roi(
    sample: LesionSample,
    rng: np.random.Generator,
    out_size: int = ROI_SIZE,
    scale_range: tuple[float, float] = (2.0, 2.5),
) -> LesionSample:
    """Cut a square ROI around the lesion and resize it to ``out_size``.

    The crop side is u * max(bbox_w, bbox_h) with u uniform over
    ``scale_range``; the offset is uniform over all placements keeping
    every endpoint inside. Crops that would leave the image are clamped
    to it (recorded on the CropRecord). Annotation coordinates are
    rewritten into ROI pixels with the exact scale out_size / crop_size.
    """
    sample.validate()
    img = sample.image
    h, w = img.shape
    pts = sample.annotation.endpoints()
    xmin, ymin = pts.min(axis=0)
    xmax, ymax = pts.max(axis=0)
    extent = max(xmax - xmin, ymax - ymin)
    min_side = int(math.ceil(extent)) + 1
    if min_side > min(h, w):
        raise InvalidParameterError(
            f"lesion extent {extent:.1f}px does not fit in a {w}x{h} image"
        )

    u = rng.uniform(*scale_range)
    side = int(round(u * extent))
    side = max(side, min_side)
    clamped = False
    if side > min(h, w):
        side = min(h, w)
        clamped = True

    def _origin(lo_pt, hi_pt, limit):
        lo = max(0, int(math.ceil(hi_pt)) - (side - 1))
        hi = min(limit - side, int(math.floor(lo_pt)))
        if lo > hi:  # cannot both contain the lesion and stay inside
            return int(np.clip(round((lo_pt + hi_pt) / 2 - side / 2), 0, limit - side)), True
        return int(rng.integers(lo, hi + 1)), False

    ox, cx = _origin(xmin, xmax, w)
    oy, cy = _origin(ymin, ymax, h)
    clamped = clamped or cx or cy

    crop = img[oy : oy + side, ox : ox + side].astype(np.float32) / 255.0
    roi = resize_bilinear(crop, out_size, out_size)
    record = CropRecord(
        origin=(float(ox), float(oy)),
        crop_size=float(side),
        resized_to=out_size,
        clamped=bool(clamped),
    )
    return LesionSample(
        image=roi,
        annotation=record.annotation_to_roi(sample.annotation),
        crop_record=record,
        source_id=sample.source_id,
    )


# ---------------------------------------------------------------------------
# Supervision targets


def make_ellipse_mask(
    annotation: RecistAnnotation, height: int, width: int
) -> np.ndarray:
    """Rasterize the pseudo-mask ellipse over a corner-aligned pixel grid.

    The ellipse is centered at the long-axis midpoint with semi-axes equal
    to half the two diameter lengths and its major axis along the long
    diameter. A pixel counts as inside when its half-pixel cell reaches
    the ellipse, which guarantees the diameter endpoints (which lie on
    the boundary) rasterize into the mask. Returns uint8 {0, 1}.
    """
    annotation.check_valid()
    p1 = np.asarray(annotation.long_p1)
    p2 = np.asarray(annotation.long_p2)
    a = annotation.long_length / 2.0
    b = annotation.short_length / 2.0
    center = (p1 + p2) / 2.0
    u = (p2 - p1) / (2.0 * a)
    v = np.array([-u[1], u[0]])

    xs = np.linspace(-1.0, 1.0, width)
    ys = np.linspace(-1.0, 1.0, height)
    gx, gy = np.meshgrid(xs, ys)
    rx = gx - center[0]
    ry = gy - center[1]
    xi = np.abs(rx * u[0] + ry * u[1])
    eta = np.abs(rx * v[0] + ry * v[1])
    # Half-pixel reach, measured in the rotated ellipse frame: a pixel
    # center sits at most half a pitch per raster axis from any point of
    # its cell, which bounds each rotated component by sqrt(2)/2 pitch.
    pitch = 2.0 * max(1.0 / (width - 1), 1.0 / (height - 1))
    pad = pitch * math.sqrt(2.0) / 2.0
    inside = (np.maximum(xi - pad, 0.0) / a) ** 2 + (
        np.maximum(eta - pad, 0.0) / b
    ) ** 2 <= 1.0
    return inside.astype(np.uint8)


def make_heatmaps(
    keypoints, height: int, width: int, sigma: float = 1.0
) -> np.ndarray:
    """Ground-truth Gaussian heatmaps, one per keypoint; (4, H, W) float32.

    ``keypoints`` is either a RecistAnnotation (ordered internally to
    long-left, long-right, short-top, short-bottom) or a (4, 2) array of
    already-ordered (x, y) positions in heatmap pixels. Each endpoint is
    snapped to its nearest pixel, so every map peaks at exactly 1 there;
    endpoints outside the map are clamped onto it with a warning.
    """
    if isinstance(keypoints, RecistAnnotation):
        pts = keypoints.ordered_keypoints()
    else:
        pts = np.asarray(keypoints, dtype=np.float64)
    if pts.shape != (4, 2):
        raise InvalidParameterError(f"expected 4 keypoints, got shape {pts.shape}")

    centers = np.round(pts).astype(np.int64)
    lo = np.array([0, 0])
    hi = np.array([width - 1, height - 1])
    clipped = np.clip(centers, lo, hi)
    if (clipped != centers).any():
        warnings.warn(
            "keypoints outside the heatmap were clamped to its border",
            stacklevel=2,
        )
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    maps = np.empty((4, height, width), dtype=np.float32)
    for k, (cx, cy) in enumerate(clipped):
        d2 = (xs[None, :] - cx) ** 2 + (ys[:, None] - cy) ** 2
        maps[k] = np.exp(-d2 / (2.0 * sigma**2))
    return maps


# ---------------------------------------------------------------------------
# Augmentation


@dataclass(frozen=True)
class AugmentLimits:
    """Magnitudes of the random affine jitter applied during training."""

    translate: float = 0.1  # normalized units
    rotate_deg: float = 25.0
    scale_low: float = 0.85
    scale_high: float = 1.18

    @classmethod
    def none(cls) -> "AugmentLimits":
        return cls(translate=0.0, rotate_deg=0.0, scale_low=1.0, scale_high=1.0)


def draw_affine(rng: np.random.Generator, limits: AugmentLimits) -> geometry.AffineParams:
    """One random similarity transform within the given magnitudes."""
    return geometry.AffineParams(
        tx=rng.uniform(-limits.translate, limits.translate),
        ty=rng.uniform(-limits.translate, limits.translate),
        alpha=math.radians(rng.uniform(-limits.rotate_deg, limits.rotate_deg)),
        s=rng.uniform(limits.scale_low, limits.scale_high),
    )


def augment(
    sample: LesionSample,
    rng: np.random.Generator,
    limits: AugmentLimits = AugmentLimits(),
    max_tries: int = 10,
) -> LesionSample:
    """Apply one random affine jointly to the image and its annotation.

    Draws failing to keep every endpoint inside the raster are rejected
    and retried; after ``max_tries`` failures the sample is returned
    unchanged.
    """
    h, w = sample.image.shape
    ann_norm = annotation_pixel_to_normalized(sample.annotation, h, w)
    for _ in range(max_tries):
        theta = draw_affine(rng, limits)
        # The warp reads source pixels through theta, so annotation points
        # move by the inverse transform.
        moved = ann_norm.transformed(geometry.compose_affine(geometry.invert(theta)))
        if np.abs(moved.endpoints()).max() <= 1.0:
            image = geometry.bilinear_sample(
                sample.image, geometry.generate_grid(theta, h, w)
            ).astype(sample.image.dtype, copy=False)
            return replace(
                sample,
                image=image,
                annotation=annotation_normalized_to_pixel(moved, h, w),
            )
    return sample


# ---------------------------------------------------------------------------
# Synthetic lesions


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the synthetic-lesion renderer."""

    image_size: int = 192
    long_px: tuple[float, float] = (30.0, 68.0)
    short_ratio: tuple[float, float] = (0.45, 0.9)
    orientation_max_deg: float = 75.0  # keeps the folded angle off its bounds
    contrast: tuple[float, float] = (0.3, 0.55)
    edge_softness: float = 0.08
    background_cells: int = 6
    background_range: tuple[float, float] = (0.15, 0.4)
    noise: float = 0.03
    center_margin: float = 1.3  # times the long semi-axis

    def validate(self) -> None:
        reach = self.long_px[1] / 2.0 * self.center_margin
        if 2 * reach >= self.image_size - 1:
            raise InvalidParameterError(
                f"lesion (up to {self.long_px[1]:.0f}px long) cannot fit in a "
                f"{self.image_size}px image with margin {self.center_margin}"
            )


def synthesize_lesion(
    rng: np.random.Generator,
    config: SynthConfig = SynthConfig(),
    source_id: str = "synthetic",
) -> LesionSample:
    """Render one lesion with exactly-known RECIST ground truth.

    A smooth elliptical blob over low-frequency background texture plus
    Gaussian pixel noise. The ground-truth long/short diameters are the
    blob's major/minor axes, orthogonal by construction.
    """
    config.validate()
    size = config.image_size

    # background: low-frequency texture from an upsampled random grid
    cells = rng.uniform(
        config.background_range[0],
        config.background_range[1],
        size=(config.background_cells, config.background_cells),
    )
    background = resize_bilinear(cells, size, size).astype(np.float64)

    a = rng.uniform(*config.long_px) / 2.0
    b = a * rng.uniform(*config.short_ratio)
    reach = math.radians(config.orientation_max_deg)
    phi = rng.uniform(-reach, reach)
    margin = a * config.center_margin
    center = rng.uniform(margin, size - 1 - margin, size=2)
    contrast = rng.uniform(*config.contrast)

    u = np.array([math.cos(phi), math.sin(phi)])
    v = np.array([-math.sin(phi), math.cos(phi)])
    xs = np.arange(size, dtype=np.float64)
    gx, gy = np.meshgrid(xs, xs)
    rx = gx - center[0]
    ry = gy - center[1]
    xi = rx * u[0] + ry * u[1]
    eta = rx * v[0] + ry * v[1]
    rho = np.sqrt((xi / a) ** 2 + (eta / b) ** 2)
    blob = contrast / (1.0 + np.exp((rho - 1.0) / config.edge_softness))

    img = background + blob + config.noise * rng.standard_normal((size, size))
    img = np.clip(img, 0.0, 1.0)
    image = np.round(img * 255.0).astype(np.uint8)

    annotation = RecistAnnotation(
        long_p1=tuple(center - a * u),
        long_p2=tuple(center + a * u),
        short_p1=tuple(center - b * v),
        short_p2=tuple(center + b * v),
        frame=FRAME_ORIGINAL,
    )
    sample = LesionSample(image=image, annotation=annotation, source_id=source_id)
    sample.validate()
    return sample


def make_synthetic_dataset(
    count: int, seed: int, config: SynthConfig = SynthConfig()
) -> list[LesionSample]:
    """Deterministic batch of synthetic lesions from one seed."""
    rng = np.random.default_rng(seed)
    return [
        synthesize_lesion(rng, config, source_id=f"synth-{seed}-{i:05d}")
        for i in range(count)
    ]


def roi_normalized_annotation(sample: LesionSample) -> RecistAnnotation:
    """The sample's annotation in corner-aligned normalized coordinates."""
    h, w = sample.image.shape
    return annotation_pixel_to_normalized(sample.annotation, h, w)

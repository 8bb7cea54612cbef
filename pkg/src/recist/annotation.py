"""RECIST annotations and crop provenance records.

A RECIST annotation is four endpoint coordinates: the two endpoints of the
long (longest in-plane) diameter and the two endpoints of the orthogonal
short diameter. Coordinates are (x, y) pairs; the ``frame`` field states
which coordinate system they live in:

* ``"original"``    pixels of the full source image
* ``"roi"``         pixels of a cropped-and-resized ROI raster
* ``"normalized"``  corner-aligned normalized coordinates, corners at +-1
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateAnnotationError

FRAME_ORIGINAL = "original"
FRAME_ROI = "roi"
FRAME_NORMALIZED = "normalized"

Point = tuple[float, float]


def _as_point(p) -> Point:
    x, y = p
    return (float(x), float(y))


@dataclass(frozen=True)
class RecistAnnotation:
    """Four diameter endpoints in a stated coordinate frame.

    ``long_p1``/``long_p2`` are the long-diameter endpoints, ``short_p1``/
    ``short_p2`` the short-diameter ones. Construction does not enforce the
    long-is-longer invariant (predictions are reported as-is); loaders and
    generators call :meth:`ordered` / :meth:`check_valid` where the
    invariant is contractual.
    """

    long_p1: Point
    long_p2: Point
    short_p1: Point
    short_p2: Point
    frame: str = FRAME_ORIGINAL

    def __post_init__(self):
        object.__setattr__(self, "long_p1", _as_point(self.long_p1))
        object.__setattr__(self, "long_p2", _as_point(self.long_p2))
        object.__setattr__(self, "short_p1", _as_point(self.short_p1))
        object.__setattr__(self, "short_p2", _as_point(self.short_p2))

    @property
    def long_length(self) -> float:
        return math.dist(self.long_p1, self.long_p2)

    @property
    def short_length(self) -> float:
        return math.dist(self.short_p1, self.short_p2)

    @property
    def is_long_short_ordered(self) -> bool:
        return self.long_length >= self.short_length

    def endpoints(self) -> np.ndarray:
        """All four endpoints as a (4, 2) array: long pair then short pair."""
        return np.array(
            [self.long_p1, self.long_p2, self.short_p1, self.short_p2],
            dtype=np.float64,
        )

    def check_valid(self) -> None:
        """Raise if either diameter has (near-)zero length."""
        if self.long_length <= 0 or self.short_length <= 0:
            raise DegenerateAnnotationError(
                f"zero-length diameter: long={self.long_length:.3g}, "
                f"short={self.short_length:.3g}"
            )

    def ordered(self) -> "RecistAnnotation":
        """Return a copy with axes swapped so the long diameter is longer."""
        if self.is_long_short_ordered:
            return self
        return replace(
            self,
            long_p1=self.short_p1,
            long_p2=self.short_p2,
            short_p1=self.long_p1,
            short_p2=self.long_p2,
        )

    def ordered_keypoints(self) -> np.ndarray:
        """Endpoints as (4, 2) in the fixed role order.

        Roles are long-left, long-right, short-top, short-bottom: the long
        pair is sorted by x (ties by y), the short pair by y (ties by x).
        y grows downwards, so "top" is the smaller y.
        """
        l1, l2 = sorted([self.long_p1, self.long_p2])
        s1, s2 = sorted(
            [self.short_p1, self.short_p2], key=lambda p: (p[1], p[0])
        )
        return np.array([l1, l2, s1, s2], dtype=np.float64)

    def transformed(self, matrix: np.ndarray, frame: str | None = None) -> "RecistAnnotation":
        """Apply a 3x3 homogeneous transform to all four endpoints."""
        pts = self.endpoints()
        hom = np.concatenate([pts, np.ones((4, 1))], axis=1)
        out = hom @ np.asarray(matrix, dtype=np.float64).T
        out = out[:, :2]
        return RecistAnnotation(
            long_p1=tuple(out[0]),
            long_p2=tuple(out[1]),
            short_p1=tuple(out[2]),
            short_p2=tuple(out[3]),
            frame=self.frame if frame is None else frame,
        )

    @classmethod
    def from_endpoints(cls, pts, frame: str) -> "RecistAnnotation":
        """Build from a (4, 2) array ordered long pair then short pair."""
        pts = np.asarray(pts, dtype=np.float64)
        return cls(
            long_p1=tuple(pts[0]),
            long_p2=tuple(pts[1]),
            short_p1=tuple(pts[2]),
            short_p2=tuple(pts[3]),
            frame=frame,
        )


KEYPOINT_ROLES = ("long_left", "long_right", "short_top", "short_bottom")


@dataclass(frozen=True)
class CropRecord:
    """How an ROI raster was cut out of the original image.

    The ROI is the square ``[origin, origin + crop_size)`` resampled to
    ``resized_to`` pixels per side. Annotation coordinates map with the
    pure scale factor ``resized_to / crop_size`` about ``origin``, which
    keeps the pixel mapping exactly invertible.
    """

    origin: Point
    crop_size: float
    resized_to: int = 128
    clamped: bool = False

    def __post_init__(self):
        object.__setattr__(self, "origin", _as_point(self.origin))
        if self.crop_size <= 0 or self.resized_to <= 0:
            raise ValueError("crop_size and resized_to must be positive")

    @property
    def scale(self) -> float:
        """Original pixels per ROI pixel."""
        return self.crop_size / self.resized_to

    def to_roi(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return (pts - np.asarray(self.origin)) * (self.resized_to / self.crop_size)

    def to_original(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return np.asarray(self.origin) + pts * self.scale

    def annotation_to_roi(self, annotation: RecistAnnotation) -> RecistAnnotation:
        pts = self.to_roi(annotation.endpoints())
        return RecistAnnotation.from_endpoints(pts, FRAME_ROI)

    def annotation_to_original(self, annotation: RecistAnnotation) -> RecistAnnotation:
        pts = self.to_original(annotation.endpoints())
        return RecistAnnotation.from_endpoints(pts, FRAME_ORIGINAL)


def identity_crop(image_size: int, resized_to: int | None = None) -> CropRecord:
    """Crop record for an ROI that covers the whole image unscaled."""
    return CropRecord(
        origin=(0.0, 0.0),
        crop_size=float(image_size),
        resized_to=int(resized_to if resized_to is not None else image_size),
    )


def pixel_to_normalized(points, height: int, width: int) -> np.ndarray:
    """Pixel (x, y) to corner-aligned normalized coordinates.

    Pixel centers (0, 0) and (width - 1, height - 1) map to (-1, -1) and
    (1, 1) respectively.
    """
    pts = np.asarray(points, dtype=np.float64)
    out = np.empty_like(pts)
    out[..., 0] = 2.0 * pts[..., 0] / (width - 1) - 1.0
    out[..., 1] = 2.0 * pts[..., 1] / (height - 1) - 1.0
    return out


def normalized_to_pixel(points, height: int, width: int) -> np.ndarray:
    """Inverse of :func:`pixel_to_normalized`."""
    pts = np.asarray(points, dtype=np.float64)
    out = np.empty_like(pts)
    out[..., 0] = (pts[..., 0] + 1.0) * (width - 1) / 2.0
    out[..., 1] = (pts[..., 1] + 1.0) * (height - 1) / 2.0
    return out


def annotation_pixel_to_normalized(
    annotation: RecistAnnotation, height: int, width: int
) -> RecistAnnotation:
    pts = pixel_to_normalized(annotation.endpoints(), height, width)
    return RecistAnnotation.from_endpoints(pts, FRAME_NORMALIZED)


def annotation_normalized_to_pixel(
    annotation: RecistAnnotation, height: int, width: int
) -> RecistAnnotation:
    pts = normalized_to_pixel(annotation.endpoints(), height, width)
    return RecistAnnotation.from_endpoints(pts, FRAME_ROI)

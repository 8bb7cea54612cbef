"""Decoding heatmaps back to image coordinates and scoring annotations.

Metric conventions (differences are in pixels at original resolution):

* location difference per axis: estimated endpoints are matched to the
  reference pair by the cheaper of the two possible assignments, then the
  two endpoint distances are averaged;
* length difference per axis: absolute difference of the diameter lengths;
* tables report mean and population standard deviation over samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .annotation import (
    FRAME_ORIGINAL,
    FRAME_ROI,
    CropRecord,
    RecistAnnotation,
    normalized_to_pixel,
    pixel_to_normalized,
)
from .data import LesionSample, crop_roi
from .errors import CheckpointError, InvalidParameterError
from .geometry import AffineParams, map_points
from .networks import CascadeModel, normalize_image
from .training import Variant, load_checkpoint

AXES = ("long", "short")

# Table 1 "Overall" reference numbers from the source experiment
# (DeepLesion, 500-image test set): (loc_mean, loc_std, len_mean, len_std).
PAPER_REFERENCE_OVERALL = {
    "~SHN": {
        "long": (10.5, 12.5, 6.93, 9.87),
        "short": (9.58, 11.8, 5.19, 7.38),
    },
    "~STN+~SHN": {
        "long": (7.63, 10.4, 4.02, 6.27),
        "short": (7.46, 8.93, 3.59, 6.22),
    },
    "STN+~SHN": {
        "long": (6.21, 9.32, 3.69, 5.59),
        "short": (5.75, 8.01, 2.87, 4.73),
    },
    "STN+SHN": {
        "long": (5.58, 8.25, 3.33, 4.93),
        "short": (4.95, 6.95, 2.79, 4.57),
    },
}


# ---------------------------------------------------------------------------
# Heatmap decoding


@dataclass
class DecodeResult:
    """Keypoints decoded from one heatmap set, in both frames."""

    annotation: RecistAnnotation  # original-image pixels
    roi_annotation: RecistAnnotation  # ROI pixels
    confidence: np.ndarray  # per-endpoint heatmap peak values
    low_confidence: bool


def decode_keypoints(
    heatmaps,
    theta: AffineParams | None = None,
    crop: CropRecord | None = None,
    roi_size: int = 128,
) -> DecodeResult:
    """Hard-argmax decode of a final heatmap set back to image pixels.

    ``heatmaps`` is (4, H, W) ordered long-left, long-right, short-top,
    short-bottom. Ties break to the smallest row, then column. The chain
    runs heatmap pixel -> normalized target coordinates -> (through
    ``theta`` when the input was transformed) ROI normalized -> ROI
    pixels -> original pixels through the crop record. An all-constant
    map cannot be localized; it still decodes (to its first pixel) but
    flags the result as low confidence.
    """
    maps = heatmaps.detach().numpy() if torch.is_tensor(heatmaps) else np.asarray(heatmaps)
    if maps.ndim != 3 or maps.shape[0] != 4:
        raise InvalidParameterError(f"expected (4, H, W) heatmaps, got {maps.shape}")
    h, w = maps.shape[1:]
    points = np.empty((4, 2), dtype=np.float64)
    confidence = np.empty(4, dtype=np.float64)
    low = False
    for k, m in enumerate(maps):
        flat_idx = int(m.argmax())  # C order: smallest row, then column
        r, c = divmod(flat_idx, w)
        points[k] = (c, r)
        confidence[k] = float(m[r, c])
        if m.max() == m.min():
            low = True

    norm = pixel_to_normalized(points, h, w)
    if theta is not None:
        norm = map_points(theta, norm)
    if crop is not None:
        roi_size = crop.resized_to
    roi_px = normalized_to_pixel(norm, roi_size, roi_size)
    roi_annotation = RecistAnnotation.from_endpoints(roi_px, FRAME_ROI)
    if crop is not None:
        original = crop.to_original(roi_px)
    else:
        original = roi_px
    return DecodeResult(
        annotation=RecistAnnotation.from_endpoints(original, FRAME_ORIGINAL),
        roi_annotation=roi_annotation,
        confidence=confidence,
        low_confidence=low,
    )


# ---------------------------------------------------------------------------
# Metrics


@dataclass(frozen=True)
class AxisMetrics:
    loc_mean: float
    loc_std: float
    len_mean: float
    len_std: float

    def to_dict(self) -> dict:
        return {
            "loc_mean": self.loc_mean,
            "loc_std": self.loc_std,
            "len_mean": self.len_mean,
            "len_std": self.len_std,
        }


def axis_differences(
    estimate: RecistAnnotation, reference: RecistAnnotation, axis: str
) -> tuple[float, float]:
    """(location, length) difference for one axis of one sample."""
    if axis == "long":
        e1, e2 = estimate.long_p1, estimate.long_p2
        g1, g2 = reference.long_p1, reference.long_p2
    else:
        e1, e2 = estimate.short_p1, estimate.short_p2
        g1, g2 = reference.short_p1, reference.short_p2
    straight = math.dist(e1, g1) + math.dist(e2, g2)
    crossed = math.dist(e1, g2) + math.dist(e2, g1)
    loc = min(straight, crossed) / 2.0
    length = abs(math.dist(e1, e2) - math.dist(g1, g2))
    return loc, length


def compare_sets(estimates, references) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Per-sample difference arrays for both axes."""
    if len(estimates) != len(references):
        raise InvalidParameterError(
            f"got {len(estimates)} estimates for {len(references)} references"
        )
    out = {}
    for axis in AXES:
        pairs = [axis_differences(e, r, axis) for e, r in zip(estimates, references)]
        arr = np.asarray(pairs, dtype=np.float64)
        out[axis] = (arr[:, 0], arr[:, 1])
    return out


def summarize(loc: np.ndarray, length: np.ndarray) -> AxisMetrics:
    return AxisMetrics(
        loc_mean=float(loc.mean()),
        loc_std=float(loc.std()),  # population std, as in the reference table
        len_mean=float(length.mean()),
        len_std=float(length.std()),
    )


def compute_metrics(estimates, references) -> dict[str, AxisMetrics]:
    """Mean/std of location and length differences per axis."""
    diffs = compare_sets(estimates, references)
    return {axis: summarize(*diffs[axis]) for axis in AXES}


@dataclass
class MetricsTable:
    """Rows x reference-columns x axes of :class:`AxisMetrics`."""

    row_names: list[str] = field(default_factory=list)
    col_names: list[str] = field(default_factory=list)
    entries: dict[tuple[str, str, str], AxisMetrics] = field(default_factory=dict)

    def set(self, row: str, col: str, axis: str, metrics: AxisMetrics) -> None:
        if row not in self.row_names:
            self.row_names.append(row)
        if col not in self.col_names:
            self.col_names.append(col)
        self.entries[(row, col, axis)] = metrics

    def get(self, row: str, col: str, axis: str) -> AxisMetrics | None:
        hit = self.entries.get((row, col, axis))
        if hit is None:
            hit = self.entries.get((col, row, axis))  # reader pairs are symmetric
        return hit

    def to_dict(self) -> dict:
        return {
            "rows": self.row_names,
            "columns": self.col_names,
            "entries": [
                {"row": r, "column": c, "axis": a, **m.to_dict()}
                for (r, c, a), m in sorted(self.entries.items())
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsTable":
        table = cls(row_names=list(d["rows"]), col_names=list(d["columns"]))
        for e in d["entries"]:
            table.entries[(e["row"], e["column"], e["axis"])] = AxisMetrics(
                e["loc_mean"], e["loc_std"], e["len_mean"], e["len_std"]
            )
        return table


def render_table(table: MetricsTable, title: str = "Keypoint and diameter differences (pixels, original resolution)") -> str:
    """Aligned-text rendering: one block per axis, Loc./Len. per column."""

    def cell(m: AxisMetrics | None, kind: str) -> str:
        if m is None:
            return "-"
        if kind == "loc":
            return f"{m.loc_mean:.2f}±{m.loc_std:.2f}"
        return f"{m.len_mean:.2f}±{m.len_std:.2f}"

    headers = ["Reader"]
    for col in table.col_names:
        headers += [f"{col} Loc.", f"{col} Len."]
    rows_by_axis = {}
    for axis in AXES:
        rows = []
        for row in table.row_names:
            cells = [row]
            for col in table.col_names:
                m = table.get(row, col, axis)
                cells += [cell(m, "loc"), cell(m, "len")]
            rows.append(cells)
        rows_by_axis[axis] = rows

    widths = [len(h) for h in headers]
    for rows in rows_by_axis.values():
        for cells in rows:
            for i, c in enumerate(cells):
                widths[i] = max(widths[i], len(c))

    def fmt(cells):
        return " | ".join(c.ljust(w) for c, w in zip(cells, widths))

    sep = "-+-".join("-" * w for w in widths)
    lines = [title, ""]
    for axis, label in (("long", "Long diameter"), ("short", "Short diameter")):
        lines += [f"[{label}]", fmt(headers), sep]
        lines += [fmt(cells) for cells in rows_by_axis[axis]]
        lines.append("")
    return "\n".join(lines)


def inter_reader_report(annotation_sets: dict[str, dict[str, RecistAnnotation]]) -> MetricsTable:
    """Pairwise differences between named annotation sets.

    Every set must cover exactly the same sample ids. Each unordered pair
    appears under both orderings (the table is symmetric) and an Overall
    column pools every partner's per-sample differences.
    """
    names = list(annotation_sets)
    if len(names) < 2:
        raise InvalidParameterError("need at least two annotation sets")
    ids = sorted(annotation_sets[names[0]])
    for name in names[1:]:
        if sorted(annotation_sets[name]) != ids:
            raise InvalidParameterError(
                f"annotation set {name!r} covers different sample ids"
            )

    table = MetricsTable(row_names=list(names), col_names=list(names) + ["Overall"])
    pooled: dict[tuple[str, str], dict] = {
        name: {axis: ([], []) for axis in AXES} for name in names
    }
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            ann_a = [annotation_sets[a][k] for k in ids]
            ann_b = [annotation_sets[b][k] for k in ids]
            diffs = compare_sets(ann_a, ann_b)
            for axis in AXES:
                m = summarize(*diffs[axis])
                table.set(a, b, axis, m)
                table.set(b, a, axis, m)
                for name in (a, b):
                    pooled[name][axis][0].append(diffs[axis][0])
                    pooled[name][axis][1].append(diffs[axis][1])
    for name in names:
        for axis in AXES:
            locs, lens = pooled[name][axis]
            table.set(
                name, "Overall", axis,
                summarize(np.concatenate(locs), np.concatenate(lens)),
            )
    return table


# ---------------------------------------------------------------------------
# Running a model over a test set


def evaluation_rois(samples, seed: int = 0) -> list[LesionSample]:
    """Deterministic ROI crops for scoring (one fixed draw per sample)."""
    return [
        crop_roi(s, np.random.default_rng([seed, 1234, i]))
        for i, s in enumerate(samples)
    ]


def annotate_rois(
    model: CascadeModel, rois, batch_size: int = 16
) -> list[DecodeResult]:
    """Forward + decode a list of ROI samples; deterministic in eval mode."""
    model.eval()
    results = []
    with torch.no_grad():
        for start in range(0, len(rois), batch_size):
            chunk = rois[start : start + batch_size]
            images = np.stack([r.image for r in chunk])[:, None].astype(np.float32)
            out = model(normalize_image(torch.from_numpy(images)))
            final = out.heatmaps[-1]
            for i, roi in enumerate(chunk):
                theta = (
                    AffineParams.from_tensor(out.theta[i])
                    if out.theta is not None
                    else None
                )
                results.append(
                    decode_keypoints(final[i], theta, roi.crop_record)
                )
    return results


def evaluate_checkpoint(
    ckpt_path, samples, seed: int = 0, batch_size: int = 16
) -> tuple[dict[str, AxisMetrics], list[DecodeResult]]:
    """Score one checkpoint against the samples' reference annotations."""
    model = load_checkpoint(ckpt_path).build_model()
    rois = evaluation_rois(samples, seed)
    decoded = annotate_rois(model, rois, batch_size)
    estimates = [d.annotation for d in decoded]
    references = [s.annotation for s in samples]
    return compute_metrics(estimates, references), decoded


@dataclass(frozen=True)
class AblationConfig:
    """One ablation row: a variant plus where its checkpoint lives."""

    variant: Variant
    checkpoint: Path

    @property
    def display_name(self) -> str:
        return self.variant.display_name


def run_ablation(
    configs: list[AblationConfig], samples, seed: int = 0
) -> tuple[MetricsTable, dict]:
    """Evaluate each trained variant on the held-out set.

    Variants whose checkpoint is missing or unreadable are reported in
    the metadata and skipped; the rest still run. Reference numbers from
    the source experiment ride along as metadata for orientation (they
    are not reproducible here).
    """
    table = MetricsTable()
    errors: dict[str, str] = {}
    for config in configs:
        try:
            metrics, _ = evaluate_checkpoint(config.checkpoint, samples, seed)
        except (CheckpointError, OSError) as exc:
            errors[config.display_name] = str(exc)
            continue
        for axis in AXES:
            table.set(config.display_name, "GT", axis, metrics[axis])
    metadata = {
        "num_samples": len(samples),
        "seed": seed,
        "errors": errors,
        "paper_reference_overall": PAPER_REFERENCE_OVERALL,
    }
    return table, metadata

"""Dataset machinery: manifests, crops, masks, heatmaps, synthesis."""

import math

import numpy as np
import pytest

from recist.annotation import RecistAnnotation
from recist.data import (
    AugmentLimits,
    LesionSample,
    SynthConfig,
    augment,
    crop_roi,
    load_manifest,
    make_ellipse_mask,
    make_heatmaps,
    make_synthetic_dataset,
    save_dataset,
    synthesize_lesion,
)
from recist.errors import (
    DegenerateAnnotationError,
    InvalidParameterError,
    ManifestError,
)

SMALL_SYNTH = SynthConfig(image_size=96, long_px=(16.0, 34.0))


def normalized_annotation(long_p1, long_p2, short_p1, short_p2):
    return RecistAnnotation(long_p1, long_p2, short_p1, short_p2, frame="normalized")


class TestEllipseMask:
    def test_containment(self):
        ann = normalized_annotation((-0.5, 0), (0.5, 0), (0, -0.25), (0, 0.25))
        mask = make_ellipse_mask(ann, 32, 32)
        assert mask[16, 16] == 1
        assert mask[0, 0] == 0 and mask[-1, -1] == 0 and mask[0, -1] == 0

    def test_area_close_to_analytic(self):
        ann = normalized_annotation((-0.5, 0), (0.5, 0), (0, -0.25), (0, 0.25))
        mask = make_ellipse_mask(ann, 64, 64)
        fraction = mask.mean()
        analytic = math.pi * 0.5 * 0.25 / 4.0
        assert abs(fraction - analytic) < 0.02

    def test_quarter_turn_symmetry(self):
        ann = normalized_annotation(
            (-0.42, -0.13), (0.38, 0.27), (0.08, -0.11), (-0.12, 0.25)
        )
        rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        base = make_ellipse_mask(ann, 64, 64)
        turned = make_ellipse_mask(ann.transformed(rot), 64, 64)
        # rotating the annotation by +90 degrees rotates the raster too
        diff = np.abs(turned.astype(int) - np.rot90(base, k=-1).astype(int))
        assert diff.sum() <= 2  # rasterization ties only

    def test_endpoints_rasterize_inside(self):
        rng = np.random.default_rng(12)
        for _ in range(200):
            center = rng.uniform(-0.2, 0.2, size=2)
            angle = rng.uniform(-math.pi, math.pi)
            a = rng.uniform(0.15, 0.4)
            b = a * rng.uniform(0.35, 1.0)
            u = np.array([math.cos(angle), math.sin(angle)])
            v = np.array([-math.sin(angle), math.cos(angle)])
            ann = normalized_annotation(
                tuple(center - a * u),
                tuple(center + a * u),
                tuple(center - b * v),
                tuple(center + b * v),
            )
            mask = make_ellipse_mask(ann, 32, 32)
            for px, py in ann.endpoints():
                col = int(round((px + 1) * 31 / 2))
                row = int(round((py + 1) * 31 / 2))
                assert mask[row, col] == 1

    def test_degenerate_rejected(self):
        ann = normalized_annotation((0, 0), (0, 0), (0, -0.1), (0, 0.1))
        with pytest.raises(DegenerateAnnotationError):
            make_ellipse_mask(ann, 32, 32)


class TestHeatmaps:
    def test_peak_and_falloff(self):
        pts = np.array([[10, 10], [20, 10], [15, 5], [15, 15]], dtype=float)
        maps = make_heatmaps(pts, 64, 64, sigma=1.0)
        assert maps[0, 10, 10] == 1.0
        assert maps[0, 10, 11] == pytest.approx(math.exp(-0.5), abs=1e-6)
        # distance 5 from the peak: (13, 14) relative to (10, 10)
        assert maps[0, 14, 13] == pytest.approx(math.exp(-12.5), rel=1e-4)

    def test_single_peak_each(self):
        pts = np.array([[7.3, 9.8], [40.1, 33.3], [12.0, 50.0], [60.0, 2.0]])
        maps = make_heatmaps(pts, 64, 64)
        for m in maps:
            assert m.max() == 1.0
            assert (m == 1.0).sum() == 1
            assert m.min() >= 0.0

    def test_sum_near_gaussian_integral(self):
        pts = np.array([[20, 30], [40, 25], [31, 12], [33, 50]], dtype=float)
        maps = make_heatmaps(pts, 64, 64, sigma=1.0)
        target = 2 * math.pi
        for m in maps:
            assert abs(m.sum() - target) / target < 0.05

    def test_out_of_bounds_clamped_with_warning(self):
        pts = np.array([[-5, 10], [20, 10], [15, 5], [15, 15]], dtype=float)
        with pytest.warns(UserWarning):
            maps = make_heatmaps(pts, 32, 32)
        assert maps[0, 10, 0] == 1.0

    def test_annotation_input_ordering(self):
        ann = RecistAnnotation((40, 20), (10, 21), (25, 30), (26, 8), frame="roi")
        maps = make_heatmaps(ann, 64, 64)
        assert maps[0, 21, 10] == 1.0  # long-left: smaller x
        assert maps[1, 20, 40] == 1.0
        assert maps[2, 8, 26] == 1.0  # short-top: smaller y
        assert maps[3, 30, 25] == 1.0


def box_sample(width=200, height=160):
    """Sample whose lesion bbox is exactly 40 x 20 pixels."""
    img = np.zeros((height, width), dtype=np.uint8)
    ann = RecistAnnotation(
        long_p1=(80, 60),
        long_p2=(120, 60),
        short_p1=(100, 50),
        short_p2=(100, 70),
        frame="original",
    )
    return LesionSample(image=img, annotation=ann, source_id="box")


class TestCropRoi:
    def test_side_within_stated_range(self):
        sample = box_sample()
        rng = np.random.default_rng(13)
        for _ in range(50):
            roi = crop_roi(sample, rng)
            assert 80 <= roi.crop_record.crop_size <= 100

    def test_deterministic_under_seed(self):
        sample = box_sample()
        a = crop_roi(sample, np.random.default_rng(7))
        b = crop_roi(sample, np.random.default_rng(7))
        assert a.crop_record == b.crop_record
        assert np.array_equal(a.image, b.image)
        assert a.annotation == b.annotation

    def test_exact_coordinate_mapping(self):
        sample = box_sample()
        roi = crop_roi(sample, np.random.default_rng(14))
        rec = roi.crop_record
        for orig_pt, roi_pt in zip(
            sample.annotation.endpoints(), roi.annotation.endpoints()
        ):
            expected = (orig_pt - np.array(rec.origin)) * 128.0 / rec.crop_size
            np.testing.assert_allclose(roi_pt, expected, atol=1e-9)

    def test_distances_scale_exactly(self):
        sample = box_sample()
        roi = crop_roi(sample, np.random.default_rng(15))
        factor = 128.0 / roi.crop_record.crop_size
        assert roi.annotation.long_length == pytest.approx(
            sample.annotation.long_length * factor, rel=1e-6
        )
        assert roi.annotation.short_length == pytest.approx(
            sample.annotation.short_length * factor, rel=1e-6
        )

    def test_lesion_kept_inside(self):
        rng = np.random.default_rng(16)
        for _ in range(30):
            sample = synthesize_lesion(rng, SMALL_SYNTH)
            roi = crop_roi(sample, rng)
            pts = roi.annotation.endpoints()
            assert pts.min() >= 0 and pts.max() <= 127

    def test_clamped_when_image_small(self):
        img = np.zeros((60, 60), dtype=np.uint8)
        ann = RecistAnnotation((10, 30), (50, 30), (30, 20), (30, 40), frame="original")
        sample = LesionSample(image=img, annotation=ann)
        roi = crop_roi(sample, np.random.default_rng(17))
        assert roi.crop_record.clamped
        assert roi.crop_record.crop_size == 60

    def test_lesion_larger_than_image_rejected(self):
        # a 99px-long lesion cannot fit any square crop of a 40-row image
        img = np.zeros((40, 100), dtype=np.uint8)
        ann = RecistAnnotation((0, 20), (99, 20), (50, 10), (50, 30), frame="original")
        sample = LesionSample(image=img, annotation=ann)
        with pytest.raises(InvalidParameterError):
            crop_roi(sample, np.random.default_rng(18))


class TestManifest:
    def test_round_trip(self, tmp_path):
        samples = make_synthetic_dataset(3, seed=21, config=SMALL_SYNTH)
        manifest = save_dataset(samples, tmp_path)
        loaded = load_manifest(manifest)
        assert len(loaded) == 3
        for orig, back in zip(samples, loaded):
            np.testing.assert_allclose(
                back.annotation.endpoints(), orig.annotation.endpoints(), atol=1e-6
            )
            assert np.array_equal(back.image, orig.image)

    def test_axes_swapped_when_short_longer(self, tmp_path):
        samples = make_synthetic_dataset(1, seed=22, config=SMALL_SYNTH)
        ann = samples[0].annotation
        swapped = RecistAnnotation(
            ann.short_p1, ann.short_p2, ann.long_p1, ann.long_p2, frame="original"
        )
        save_dataset(
            [LesionSample(samples[0].image, swapped, source_id="s")], tmp_path
        )
        loaded = load_manifest(tmp_path / "manifest.csv")
        assert loaded[0].annotation.is_long_short_ordered
        assert loaded[0].annotation.long_p1 == ann.long_p1

    def test_zero_length_row_rejected_with_row_number(self, tmp_path):
        samples = make_synthetic_dataset(2, seed=23, config=SMALL_SYNTH)
        manifest = save_dataset(samples, tmp_path)
        lines = manifest.read_text().splitlines()
        parts = lines[2].split(",")
        parts[3], parts[4] = parts[1], parts[2]  # long_p2 := long_p1
        parts[5], parts[6] = parts[1], parts[2]
        parts[7], parts[8] = parts[1], parts[2]
        lines[2] = ",".join(parts)
        manifest.write_text("\n".join(lines) + "\n")
        with pytest.raises(ManifestError) as err:
            load_manifest(manifest)
        assert err.value.row == 3

    def test_missing_image_rejected(self, tmp_path):
        samples = make_synthetic_dataset(1, seed=24, config=SMALL_SYNTH)
        manifest = save_dataset(samples, tmp_path)
        (tmp_path / "images" / f"{samples[0].source_id}.png").unlink()
        with pytest.raises(ManifestError):
            load_manifest(manifest)

    def test_bad_header_rejected(self, tmp_path):
        p = tmp_path / "manifest.csv"
        p.write_text("image,a,b\nfoo.png,1,2\n")
        with pytest.raises(ManifestError):
            load_manifest(p)


def roi_fixture(seed=25):
    rng = np.random.default_rng(seed)
    sample = synthesize_lesion(rng, SMALL_SYNTH)
    return crop_roi(sample, rng)


class FixedRng:
    """uniform() stub returning the upper bound; drives augment deterministically."""

    def uniform(self, lo, hi):
        return hi


class TestAugment:
    def test_zero_limits_is_identity(self):
        roi = roi_fixture()
        out = augment(roi, np.random.default_rng(26), AugmentLimits.none())
        assert np.array_equal(out.image, roi.image)
        np.testing.assert_allclose(
            out.annotation.endpoints(), roi.annotation.endpoints(), atol=1e-9
        )

    def test_quarter_turn_rotates_points_about_center(self):
        roi = roi_fixture()
        limits = AugmentLimits(translate=0.0, rotate_deg=90.0, scale_low=1.0, scale_high=1.0)
        out = augment(roi, FixedRng(), limits)
        h, w = roi.image.shape
        center = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
        # sampling rotates the content by -90 deg, i.e. points map through
        # the inverse rotation
        rel = roi.annotation.endpoints() - center
        expected = np.stack([rel[:, 1], -rel[:, 0]], axis=1) + center
        np.testing.assert_allclose(out.annotation.endpoints(), expected, atol=1e-9)

    def test_seeded_reproducibility(self):
        roi = roi_fixture()
        a = augment(roi, np.random.default_rng(27))
        b = augment(roi, np.random.default_rng(27))
        assert np.array_equal(a.image, b.image)
        assert a.annotation == b.annotation

    def test_endpoints_stay_inside(self):
        rng = np.random.default_rng(28)
        for _ in range(30):
            roi = crop_roi(synthesize_lesion(rng, SMALL_SYNTH), rng)
            out = augment(roi, rng)
            pts = out.annotation.endpoints()
            assert pts.min() >= 0 and pts.max() <= 127


class TestSynthesize:
    def test_axes_orthogonal(self):
        rng = np.random.default_rng(29)
        for _ in range(20):
            ann = synthesize_lesion(rng, SMALL_SYNTH).annotation
            u = np.subtract(ann.long_p2, ann.long_p1)
            v = np.subtract(ann.short_p2, ann.short_p1)
            dot = np.dot(u / np.linalg.norm(u), v / np.linalg.norm(v))
            assert abs(dot) < 1e-9

    def test_long_not_shorter(self):
        for seed in range(1000):
            rng = np.random.default_rng(seed)
            ann = synthesize_lesion(rng, SMALL_SYNTH).annotation
            ann.check_valid()
            assert ann.is_long_short_ordered

    def test_byte_identical_under_seed(self):
        a = make_synthetic_dataset(2, seed=30, config=SMALL_SYNTH)
        b = make_synthetic_dataset(2, seed=30, config=SMALL_SYNTH)
        for x, y in zip(a, b):
            assert np.array_equal(x.image, y.image)
            assert x.annotation == y.annotation

    def test_infeasible_config_rejected(self):
        cfg = SynthConfig(image_size=48, long_px=(40.0, 60.0))
        with pytest.raises(InvalidParameterError):
            synthesize_lesion(np.random.default_rng(31), cfg)

"""The fit/predict facade."""

import numpy as np
import pytest

from recist.annotation import RecistAnnotation
from recist.data import SynthConfig, make_synthetic_dataset
from recist.errors import InvalidParameterError, NotFittedError
from recist.estimator import RecistEstimator

FAST_PARAMS = dict(
    loc_widths=(8, 16, 24, 32, 48),
    fpn_width=16,
    hg_stacks=1,
    hg_channels=8,
    batch_size=4,
    max_epochs=2,
    augment=False,
    seed=3,
)
SMALL_SYNTH = SynthConfig(image_size=160, long_px=(30.0, 60.0))


def center_bbox(sample, factor=2.0):
    height, width = sample.image.shape
    pts = sample.annotation.endpoints()
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    side = min(factor * max(x1 - x0, y1 - y0), width, height)
    x = float(np.clip((x0 + x1) / 2 - side / 2, 0, width - side))
    y = float(np.clip((y0 + y1) / 2 - side / 2, 0, height - side))
    return (x, y, side, side)


class TestParams:
    def test_get_set_round_trip(self):
        est = RecistEstimator(hg_channels=12, seed=9)
        params = est.get_params()
        assert params["hg_channels"] == 12 and params["seed"] == 9
        clone = RecistEstimator(**params)
        assert clone.get_params() == params

    def test_set_params_chains_and_validates(self):
        est = RecistEstimator()
        assert est.set_params(seed=4).seed == 4
        with pytest.raises(InvalidParameterError):
            est.set_params(nonsense=1)

    def test_predict_before_fit(self):
        with pytest.raises(NotFittedError):
            RecistEstimator().predict(np.zeros((64, 64), np.uint8), (0, 0, 32, 32))


class TestFitPredict:
    @pytest.fixture(scope="class")
    def fitted(self, tmp_path_factory):
        samples = make_synthetic_dataset(8, seed=110, config=SMALL_SYNTH)
        est = RecistEstimator(
            variant="full",
            work_dir=str(tmp_path_factory.mktemp("fit")),
            **FAST_PARAMS,
        )
        est.fit(samples[:6], samples[6:])
        return est, samples

    def test_fit_produces_predictions(self, fitted):
        est, samples = fitted
        sample = samples[0]
        ann = est.predict(sample.image, center_bbox(sample))
        assert isinstance(ann, RecistAnnotation)
        assert ann.frame == "original"
        pts = ann.endpoints()
        assert np.isfinite(pts).all()

    def test_predict_full_exposes_confidence_and_contour(self, fitted):
        est, samples = fitted
        result = est.predict_full(samples[0].image, center_bbox(samples[0]))
        assert result.confidence.shape == (4,)
        assert result.theta is not None

    def test_save_load_round_trip(self, fitted, tmp_path):
        est, samples = fitted
        path = tmp_path / "est.ckpt"
        est.save(path)
        loaded = RecistEstimator.load(path)
        bbox = center_bbox(samples[1])
        a = est.predict(samples[1].image, bbox)
        b = loaded.predict(samples[1].image, bbox)
        np.testing.assert_allclose(a.endpoints(), b.endpoints(), atol=1e-9)

    def test_fit_empty_rejected(self):
        with pytest.raises(InvalidParameterError):
            RecistEstimator(**FAST_PARAMS).fit([])

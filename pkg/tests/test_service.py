"""HTTP service contract: validation codes, determinism, round trips."""

import base64
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from recist.inference import InferencePipeline, bbox_to_crop
from recist.service import ServeSettings, create_app
from recist.training import load_checkpoint

from conftest import png_bytes


@pytest.fixture(scope="module")
def client(tiny_joint_ckpt):
    app = create_app(ServeSettings(ckpt=str(tiny_joint_ckpt)))
    return TestClient(app)


@pytest.fixture(scope="module")
def no_model_client():
    return TestClient(create_app(ServeSettings(ckpt=None)))


def infer_body(image: np.ndarray, bbox: dict) -> dict:
    return {"image": base64.b64encode(png_bytes(image)).decode(), "bbox": bbox}


def lesion_bbox(sample, factor=2.0):
    """A plausible user box: the lesion with context, kept inside the image."""
    height, width = sample.image.shape
    pts = sample.annotation.endpoints()
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    side = min(factor * max(x1 - x0, y1 - y0), width, height)
    x = float(np.clip(cx - side / 2, 0, width - side))
    y = float(np.clip(cy - side / 2, 0, height - side))
    return {"x": x, "y": y, "w": side, "h": side}


class TestHealthz:
    def test_ok_with_model(self, client, tiny_joint_ckpt):
        r = client.get("/api/v1/healthz")
        assert r.status_code == 200
        body = r.json()
        assert body["status"] == "ok"
        assert body["model_version"] == load_checkpoint(tiny_joint_ckpt).version
        assert body["uptime_s"] >= 0

    def test_unavailable_without_model(self, no_model_client):
        r = no_model_client.get("/api/v1/healthz")
        assert r.status_code == 503
        assert r.json()["status"] == "unavailable"

    def test_bad_checkpoint_path_gives_503(self, tmp_path):
        app = create_app(ServeSettings(ckpt=str(tmp_path / "missing.ckpt")))
        assert TestClient(app).get("/api/v1/healthz").status_code == 503


class TestInferValidation:
    def test_no_model_503(self, no_model_client, synth_sample):
        r = no_model_client.post(
            "/api/v1/infer", json=infer_body(synth_sample.image, lesion_bbox(synth_sample))
        )
        assert r.status_code == 503

    def test_bbox_outside_image_400(self, client, synth_sample):
        r = client.post(
            "/api/v1/infer",
            json=infer_body(synth_sample.image, {"x": 100, "y": 100, "w": 500, "h": 50}),
        )
        assert r.status_code == 400
        err = r.json()["errors"][0]
        assert err["field"] == "bbox.w"
        assert "exceeds" in err["message"]

    def test_zero_area_bbox_400(self, client, synth_sample):
        r = client.post(
            "/api/v1/infer",
            json=infer_body(synth_sample.image, {"x": 10, "y": 10, "w": 0, "h": 20}),
        )
        assert r.status_code == 400
        assert r.json()["errors"][0]["field"] == "bbox.w"

    def test_bad_base64_400(self, client):
        r = client.post(
            "/api/v1/infer",
            json={"image": "!!!notbase64", "bbox": {"x": 0, "y": 0, "w": 5, "h": 5}},
        )
        assert r.status_code == 400
        assert r.json()["errors"][0]["field"] == "image"

    def test_not_a_png_400(self, client):
        payload = base64.b64encode(b"plain bytes").decode()
        r = client.post(
            "/api/v1/infer",
            json={"image": payload, "bbox": {"x": 0, "y": 0, "w": 5, "h": 5}},
        )
        assert r.status_code == 400

    def test_missing_fields_400(self, client):
        r = client.post("/api/v1/infer", json={"image": "aa=="})
        assert r.status_code == 400

    def test_oversized_image_413(self, tiny_joint_ckpt, synth_sample):
        app = create_app(ServeSettings(ckpt=str(tiny_joint_ckpt), max_image_px=100))
        r = TestClient(app).post(
            "/api/v1/infer",
            json=infer_body(synth_sample.image, lesion_bbox(synth_sample)),
        )
        assert r.status_code == 413


class TestInferBehavior:
    def test_identical_requests_identical_bodies(self, client, synth_sample):
        body = infer_body(synth_sample.image, lesion_bbox(synth_sample))
        r1 = client.post("/api/v1/infer", json=body)
        r2 = client.post("/api/v1/infer", json=body)
        assert r1.status_code == 200
        assert r1.content == r2.content

    def test_response_shape_and_key_order(self, client, synth_sample):
        r = client.post(
            "/api/v1/infer", json=infer_body(synth_sample.image, lesion_bbox(synth_sample))
        )
        body = r.json()
        roles = [e["role"] for e in body["endpoints"]]
        assert roles == ["long_left", "long_right", "short_top", "short_bottom"]
        assert len(body["confidence"]) == 4
        assert all(0.0 <= c <= 1.0 for c in body["confidence"])
        assert body["model_version"]
        keys = list(json.loads(r.content.decode()).keys())
        assert keys == sorted(keys)

    def test_roi_round_trip_consistency(self, client, tiny_joint_ckpt, synth_sample):
        bbox = lesion_bbox(synth_sample)
        r = client.post("/api/v1/infer", json=infer_body(synth_sample.image, bbox))
        body = r.json()
        endpoints = np.array([[e["x"], e["y"]] for e in body["endpoints"]])

        box = (bbox["x"], bbox["y"], bbox["w"], bbox["h"])
        crop = bbox_to_crop(box, synth_sample.image.shape)
        reprojected = crop.to_roi(endpoints)
        direct = InferencePipeline.from_checkpoint(tiny_joint_ckpt).annotate(
            synth_sample.image, box
        )
        np.testing.assert_allclose(
            reprojected, direct.roi_annotation.endpoints(), atol=1e-6
        )

    def test_lengths_match_endpoints(self, client, synth_sample):
        r = client.post(
            "/api/v1/infer", json=infer_body(synth_sample.image, lesion_bbox(synth_sample))
        )
        body = r.json()
        pts = {e["role"]: (e["x"], e["y"]) for e in body["endpoints"]}
        long_len = np.hypot(
            pts["long_right"][0] - pts["long_left"][0],
            pts["long_right"][1] - pts["long_left"][1],
        )
        assert body["long_len_px"] == pytest.approx(long_len, rel=1e-9)

    def test_multipart_request(self, client, synth_sample):
        bbox = lesion_bbox(synth_sample)
        r = client.post(
            "/api/v1/infer",
            files={"image": ("slice.png", png_bytes(synth_sample.image), "image/png")},
            data={"bbox": json.dumps(bbox)},
        )
        assert r.status_code == 200
        json_r = client.post(
            "/api/v1/infer", json=infer_body(synth_sample.image, bbox)
        )
        assert r.content == json_r.content

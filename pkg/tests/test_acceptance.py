"""Acceptance gate: every criterion at its stated tolerance.

Each criterion prints one PASS line (run with ``pytest -s`` to see them
as they complete; failures surface through the assertions regardless).
Two criteria are real training runs and dominate the runtime.
"""

import base64
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from recist.annotation import RecistAnnotation, identity_crop, normalized_to_pixel
from recist.data import make_heatmaps
from recist.errors import InvalidParameterError
from recist.evaluation import (
    AxisMetrics,
    MetricsTable,
    compute_metrics,
    decode_keypoints,
    inter_reader_report,
    render_table,
)
from recist.experiments import (
    EXPERIMENT_SYNTH,
    ExperimentPlan,
    StageBudget,
    overfit_oracle,
    scaled_ablation,
)
from recist.geometry import (
    AffineParams,
    affine_grid,
    bilinear_sample,
    canonical_theta,
    compose_affine,
    generate_grid,
    map_points,
)
from recist.inference import InferencePipeline, bbox_to_crop
from recist.losses import (
    Phase,
    combine_joint,
    combine_shn,
    combine_stn,
    loss_cos,
    loss_hm,
    loss_lrp,
    loss_tpp,
)
from recist.networks import ModelConfig
from recist.training import TrainConfig, Variant, train_stage

from conftest import png_bytes
from test_geometry import (
    _fd_gradient,
    _near_pixel_boundary,
    _rel_err,
    product_oracle,
    random_annotation,
    random_theta,
)

REPORT = "ACCEPTANCE {name}: PASS ({detail})"


def report(name: str, detail: str = ""):
    print(REPORT.format(name=name, detail=detail), flush=True)


class TestGeometrySuite:
    """Composition exactness, sampler gradients, canonical round trips."""

    def test_geometry_suite(self):
        start = time.time()

        rng = np.random.default_rng(1000)
        worst = 0.0
        for _ in range(1000):
            theta = random_theta(rng, t_max=2.0, s_range=(0.05, 5.0))
            dev = np.abs(compose_affine(theta) - product_oracle(theta)).max()
            worst = max(worst, dev)
        assert worst < 1e-12

        checked = 0
        worst_grad = 0.0
        while checked < 4:
            theta = random_theta(rng, t_max=0.3, s_range=(0.6, 1.4))
            if _near_pixel_boundary(theta, 8, 8, 8, 8):
                continue
            checked += 1
            img = rng.random((8, 8))
            weights = rng.random((8, 8))
            img_t = torch.tensor(img, requires_grad=True)
            theta_t = torch.tensor(
                theta.as_tuple(), dtype=torch.float64, requires_grad=True
            )
            out = bilinear_sample(img_t[None, None], affine_grid(theta_t[None], 8, 8))
            (out[0, 0] * torch.tensor(weights)).sum().backward()

            def loss_img(x, th=theta, w=weights):
                return float((bilinear_sample(x, generate_grid(th, 8, 8)) * w).sum())

            def loss_theta(tv, im=img, w=weights):
                return float(
                    (bilinear_sample(im, generate_grid(AffineParams(*tv), 8, 8)) * w).sum()
                )

            worst_grad = max(
                worst_grad,
                _rel_err(img_t.grad.numpy(), _fd_gradient(loss_img, img.copy())),
                _rel_err(
                    theta_t.grad.numpy(),
                    _fd_gradient(loss_theta, np.array(theta.as_tuple())),
                ),
            )
        assert worst_grad < 1e-3

        worst_rt = 0.0
        for _ in range(300):
            ann = random_annotation(rng)
            theta = canonical_theta(ann)
            mapped = map_points(theta, [(-0.5, 0), (0.5, 0)])
            ref = np.array([ann.long_p1, ann.long_p2])
            worst_rt = max(
                worst_rt,
                min(
                    np.abs(mapped - ref).max(),
                    np.abs(mapped[::-1] - ref).max(),
                ),
            )
        assert worst_rt < 1e-9

        elapsed = time.time() - start
        assert elapsed < 60.0
        report(
            "geometry-suite",
            f"composition<{worst:.1e}, grads<{worst_grad:.1e}, "
            f"round-trip<{worst_rt:.1e}, {elapsed:.1f}s",
        )


class TestLossSuite:
    """Bounds, zeros at perfection, cosine constructions, weightings."""

    def test_loss_suite(self):
        rng = np.random.default_rng(1001)

        # bounded in [0, 1] and zero exactly at perfection
        for _ in range(50):
            mask = torch.rand(32, 32)
            assert loss_lrp(mask, mask).item() == 0.0
            other = torch.rand(32, 32)
            assert 0.0 <= loss_lrp(other, mask).item() <= 1.0
            th = torch.tensor(
                [[rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1.5, 1.5), rng.uniform(0.05, 2)]]
            )
            th2 = torch.tensor(
                [[rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1.5, 1.5), rng.uniform(0.05, 2)]]
            )
            assert loss_tpp(th, th).item() == 0.0
            assert 0.0 <= loss_tpp(th, th2).item() <= 1.0
            maps = torch.rand(1, 4, 64, 64)
            assert loss_hm([maps.clone()], maps).item() == 0.0
            assert 0.0 <= loss_hm([torch.rand_like(maps)], maps).item() <= 1.0

        def maps_for(points):
            px = (np.asarray(points, dtype=np.float64) + 1.0) * 63 / 2.0
            return torch.tensor(make_heatmaps(px, 64, 64), dtype=torch.float64)[None]

        orth = loss_cos(maps_for([(-0.5, 0), (0.5, 0), (0, -0.3), (0, 0.3)])).item()
        par = loss_cos(maps_for([(-0.5, 0), (0.5, 0), (-0.3, 0), (0.3, 0)])).item()
        mid = loss_cos(maps_for([(-0.5, 0), (0.5, 0), (-0.4, -0.4), (0.4, 0.4)])).item()
        assert abs(orth - 0.0) < 1e-3
        assert abs(par - 1.0) < 1e-3
        assert abs(mid - 0.5) < 1e-3

        # stated weightings, exactly
        assert combine_stn(0.2, 0.3, Phase.STN_WARMUP) == 10 * 0.2 + 0.3
        assert combine_stn(0.2, 0.3, Phase.STN_REFINE) == 0.2 + 10 * 0.3
        assert combine_shn(0.1, 0.2) == 0.1 + 0.2
        assert combine_joint(0.1, 0.2, 0.3, 0.4) == 0.1 + 0.2 + 0.3 + 0.4
        report(
            "loss-suite",
            f"cos constructions ({orth:.2e}, {mid:.4f}, {par:.6f}), weightings exact",
        )


class TestScheduleConformance:
    """LR sequence {5e-4, 5e-5, 5e-6}; exactly one phase switch."""

    def test_schedule_conformance(self, tmp_path):
        from recist.data import SynthConfig, make_synthetic_dataset

        samples = make_synthetic_dataset(
            9, seed=1002, config=SynthConfig(image_size=160, long_px=(30, 60))
        )
        config = TrainConfig(
            stage="stn",
            seed=2,
            batch_size=6,
            augment=False,
            plateau_patience=2,
            plateau_eps=1.0,
            max_epochs=40,
            log_every=5,
        )
        model = ModelConfig(
            loc_widths=(8, 16, 24, 32, 48), fpn_width=16, hg_stacks=1, hg_channels=8
        )
        result = train_stage(config, model, samples[:6], samples[6:], tmp_path)
        assert result.lr_sequence == [5e-4, 5e-5, 5e-6]
        assert result.state.stopped and result.state.lr_drops_done == 2
        records = [json.loads(line) for line in open(result.history_path)]
        switches = [r for r in records if r.get("event") == "phase_switch"]
        assert len(switches) == 1
        observed = {r["lr"] for r in records if r["type"] == "epoch"}
        assert observed <= {5e-4, 5e-5, 5e-6}
        report(
            "schedule-conformance",
            f"lr sequence {result.lr_sequence}, one phase switch",
        )


class TestMetricsOracle:
    """Analytic (3,4)->5 case, reader symmetry, golden rendering."""

    def test_metrics_oracle(self):
        base = RecistAnnotation((10, 40), (90, 44), (52, 10), (48, 70), frame="original")
        moved = RecistAnnotation((13, 44), (93, 48), (52, 10), (48, 70), frame="original")
        metrics = compute_metrics([moved], [base])
        assert metrics["long"].loc_mean == 5.0
        assert metrics["long"].len_mean == 0.0
        assert metrics["long"].loc_std == 0.0

        rng = np.random.default_rng(1003)
        ids = [f"case-{i}" for i in range(5)]
        sets = {}
        for reader in ("DL", "R1", "R2"):
            sets[reader] = {
                k: RecistAnnotation(
                    tuple(np.add(base.long_p1, rng.uniform(-4, 4, 2))),
                    tuple(np.add(base.long_p2, rng.uniform(-4, 4, 2))),
                    base.short_p1,
                    base.short_p2,
                    frame="original",
                )
                for k in ids
            }
        table = inter_reader_report(sets)
        for axis in ("long", "short"):
            assert table.get("DL", "R1", axis) == table.get("R1", "DL", axis)
            assert table.get("R1", "R2", axis) == table.get("R2", "R1", axis)

        golden_table = MetricsTable()
        rows = [
            ("~SHN", (10.5, 12.5, 6.93, 9.87), (9.58, 11.8, 5.19, 7.38)),
            ("~STN+~SHN", (7.63, 10.4, 4.02, 6.27), (7.46, 8.93, 3.59, 6.22)),
            ("STN+~SHN", (6.21, 9.32, 3.69, 5.59), (5.75, 8.01, 2.87, 4.73)),
            ("STN+SHN", (5.58, 8.25, 3.33, 4.93), (4.95, 6.95, 2.79, 4.57)),
        ]
        for name, long_vals, short_vals in rows:
            golden_table.set(name, "GT", "long", AxisMetrics(*long_vals))
            golden_table.set(name, "GT", "short", AxisMetrics(*short_vals))
        golden = (Path(__file__).parent / "golden" / "metrics_table.txt").read_text()
        assert render_table(golden_table) == golden
        report("metrics-oracle", "3-4-5 exact, symmetry holds, golden render matches")


class TestServiceContract:
    """Determinism, validation codes, ROI round trip."""

    def test_service_contract(self, tiny_joint_ckpt, synth_sample):
        from fastapi.testclient import TestClient

        from recist.service import ServeSettings, create_app

        client = TestClient(create_app(ServeSettings(ckpt=str(tiny_joint_ckpt))))
        height, width = synth_sample.image.shape
        pts = synth_sample.annotation.endpoints()
        x0, y0 = pts.min(axis=0)
        x1, y1 = pts.max(axis=0)
        side = min(2.0 * max(x1 - x0, y1 - y0), width, height)
        bbox = {
            "x": float(np.clip((x0 + x1) / 2 - side / 2, 0, width - side)),
            "y": float(np.clip((y0 + y1) / 2 - side / 2, 0, height - side)),
            "w": side,
            "h": side,
        }
        body = {
            "image": base64.b64encode(png_bytes(synth_sample.image)).decode(),
            "bbox": bbox,
        }

        r1 = client.post("/api/v1/infer", json=body)
        r2 = client.post("/api/v1/infer", json=body)
        assert r1.status_code == 200 and r1.content == r2.content

        bad_bbox = dict(body, bbox={"x": 0, "y": 0, "w": 10_000, "h": 10})
        assert client.post("/api/v1/infer", json=bad_bbox).status_code == 400
        tiny_limit = TestClient(
            create_app(ServeSettings(ckpt=str(tiny_joint_ckpt), max_image_px=10))
        )
        assert tiny_limit.post("/api/v1/infer", json=body).status_code == 413
        no_model = TestClient(create_app(ServeSettings(ckpt=None)))
        assert no_model.post("/api/v1/infer", json=body).status_code == 503
        assert no_model.get("/api/v1/healthz").status_code == 503

        endpoints = np.array([[e["x"], e["y"]] for e in r1.json()["endpoints"]])
        crop = bbox_to_crop(
            (bbox["x"], bbox["y"], bbox["w"], bbox["h"]), synth_sample.image.shape
        )
        direct = InferencePipeline.from_checkpoint(tiny_joint_ckpt).annotate(
            synth_sample.image, (bbox["x"], bbox["y"], bbox["w"], bbox["h"])
        )
        round_trip = np.abs(
            crop.to_roi(endpoints) - direct.roi_annotation.endpoints()
        ).max()
        assert round_trip < 1e-6
        report(
            "service-contract",
            f"deterministic bodies, 400/413/503, round trip {round_trip:.1e}",
        )


# ---------------------------------------------------------------------------
# Training-run criteria (the slow ones). Budgets are calibration choices;
# the criteria fix sample counts, step caps, tolerances and the ordering.

OVERFIT_PLAN = ExperimentPlan(
    stn=StageBudget(max_epochs=200, lr0=2e-3),
    shn=StageBudget(max_epochs=400, lr0=2e-3),
    joint=StageBudget(max_epochs=250, lr0=5e-4),
    batch_size=20,
    plateau_patience=25,
    plateau_eps=5e-4,
    augment=False,
)

ABLATION_PLAN = ExperimentPlan(
    stn=StageBudget(max_epochs=30, lr0=2e-3),
    shn=StageBudget(max_epochs=30, lr0=2e-3),
    joint=StageBudget(max_epochs=20, lr0=3e-4),
    batch_size=32,
    plateau_patience=10,
    plateau_eps=1e-3,
    augment=False,
)


class TestOverfitOracle:
    """FULL variant memorizes 20 lesions within 2000 steps."""

    def test_overfit_oracle(self, tmp_path):
        start = time.time()
        out = overfit_oracle(OVERFIT_PLAN, tmp_path, n_samples=20)
        elapsed = time.time() - start
        assert out["steps"] <= 2000, out
        assert out["mean_roi_px"] < 2.0, out
        report(
            "overfit-oracle",
            f"{out['steps']} steps, mean decode error {out['mean_roi_px']:.2f} "
            f"ROI px (max {out['max_roi_px']:.2f}), {elapsed / 60:.1f} min",
        )


class TestScaledExperiment:
    """Variant ordering on 500 train / 100 test synthetic lesions."""

    def test_scaled_ablation_ordering(self, tmp_path):
        start = time.time()
        table, meta = scaled_ablation(ABLATION_PLAN, tmp_path)
        assert not meta["errors"], meta["errors"]
        loc = {
            variant.display_name: table.get(variant.display_name, "GT", "long").loc_mean
            for variant in Variant
        }
        elapsed = time.time() - start
        print(render_table(table))
        detail = ", ".join(f"{k}={v:.2f}" for k, v in loc.items())
        assert loc["STN+SHN"] < loc["STN+~SHN"], detail
        assert loc["STN+~SHN"] < loc["~STN+~SHN"], detail
        assert loc["~STN+~SHN"] < loc["~SHN"], detail
        assert elapsed < 2 * 3600
        report("scaled-experiment", f"long-axis loc ordering holds: {detail}")

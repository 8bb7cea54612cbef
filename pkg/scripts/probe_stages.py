"""Stage-by-stage quality probe on the 20-sample overfit task."""

import json
import sys
import tempfile
import time

import numpy as np
import torch

from recist.data import SynthConfig, make_synthetic_dataset, roi_normalized_annotation
from recist.evaluation import annotate_rois, evaluation_rois
from recist.geometry import canonical_theta
from recist.networks import ModelConfig, normalize_image
from recist.training import TrainConfig, Variant, train_stage, _heatmap_targets

SYNTH = SynthConfig(image_size=192)


def theta_errors(model, rois):
    model.eval()
    rows = []
    with torch.no_grad():
        for roi in rois:
            x = normalize_image(torch.tensor(roi.image)[None, None])
            out = model.stn(x)
            gt = np.array(canonical_theta(roi_normalized_annotation(roi)).as_tuple())
            rows.append(np.abs(out.theta[0].numpy() - gt))
    return np.mean(rows, axis=0)


def peak_errors(model, rois, jitter=None):
    """Mean distance between heatmap argmax and the true endpoint (hm px)."""
    from recist.geometry import AffineParams, compose_params

    model.eval()
    errs = []
    with torch.no_grad():
        for roi in rois:
            ann = roi_normalized_annotation(roi)
            th = canonical_theta(ann)
            if jitter is not None:
                th = compose_params(th, jitter)
            x = normalize_image(torch.tensor(roi.image)[None, None])
            out = model(x, theta_override=torch.tensor(th.as_tuple(), dtype=torch.float32)[None])
            final = out.heatmaps[-1][0].numpy()
            tgts = _heatmap_targets([ann], np.array([th.as_tuple()]), 64)[0].numpy()
            for k in range(4):
                pr, pc = np.unravel_index(final[k].argmax(), (64, 64))
                tr, tc = np.unravel_index(tgts[k].argmax(), (64, 64))
                errs.append(np.hypot(pc - tc, pr - tr))
    return float(np.mean(errs)), float(np.max(errs))


def decode_errors(model, rois):
    decoded = annotate_rois(model, rois)
    errs = []
    for roi, d in zip(rois, decoded):
        gt = roi.annotation.ordered_keypoints()
        est = d.roi_annotation.endpoints()
        errs.extend(np.linalg.norm(est - gt, axis=1))
    return float(np.mean(errs)), float(np.max(errs))


def main():
    spec = json.loads(sys.argv[1])
    samples = make_synthetic_dataset(20, seed=200, config=SYNTH)
    model_cfg = ModelConfig(
        loc_widths=(8, 16, 32, 64, 128),
        fpn_width=32,
        hg_stacks=2,
        hg_channels=spec.get("hg_channels", 32),
    )
    rois = evaluation_rois(samples, seed=0)
    base = dict(
        seed=1,
        batch_size=spec.get("batch_size", 20),
        augment=False,
        plateau_patience=spec.get("patience", 20),
        plateau_eps=spec.get("eps", 5e-4),
        log_every=100,
    )
    paths = {}
    t0 = time.time()
    with tempfile.TemporaryDirectory() as d:
        for stage in ("stn", "shn", "joint"):
            cfg = TrainConfig(
                stage=stage,
                lr0=spec[stage]["lr0"],
                max_epochs=spec[stage]["max_epochs"],
                variant=Variant.FULL,
                **base,
            )
            init = {"stn": paths["stn"], "shn": paths["shn"]} if stage == "joint" else None
            res = train_stage(cfg, model_cfg, samples, samples, d + "/" + stage, init_from=init)
            paths[stage] = res.best_path
            model = res.model
            print(
                f"[{stage}] steps={res.state.step} epochs={res.state.epoch} "
                f"stopped={res.state.stopped} best_val={res.state.best_val_loss:.5f} "
                f"wall={time.time() - t0:.0f}s"
            )
            if stage == "stn":
                print("   mean |theta err| [tx ty alpha s]:", np.round(theta_errors(model, rois), 4))
            if stage == "shn":
                from recist.geometry import AffineParams

                mean_c, max_c = peak_errors(model, rois)
                mean_j, max_j = peak_errors(model, rois, AffineParams(0.05, -0.04, 0.15, 1.06))
                print(f"   peak err canonical: mean={mean_c:.2f} max={max_c:.2f} hm px")
                print(f"   peak err perturbed: mean={mean_j:.2f} max={max_j:.2f} hm px")
            if stage == "joint":
                mean_d, max_d = decode_errors(model, rois)
                print(f"   decode err: mean={mean_d:.2f} max={max_d:.2f} ROI px")


if __name__ == "__main__":
    main()

"""Calibration probe for the 20-sample overfit budget."""

import sys
import tempfile
import time

import numpy as np

from recist.data import SynthConfig, make_synthetic_dataset
from recist.evaluation import annotate_rois, evaluation_rois
from recist.networks import ModelConfig
from recist.training import Variant, run_variant

SYNTH = SynthConfig(image_size=192)


def decoded_roi_error(model, samples, seed=0):
    rois = evaluation_rois(samples, seed=seed)
    decoded = annotate_rois(model, rois)
    errs = []
    for roi, d in zip(rois, decoded):
        gt = roi.annotation.ordered_keypoints()
        est = d.roi_annotation.endpoints()
        errs.extend(np.linalg.norm(est - gt, axis=1))
    return float(np.mean(errs)), float(np.max(errs))


def main():
    n_epochs = dict(stn=int(sys.argv[1]), shn=int(sys.argv[2]), joint=int(sys.argv[3]))
    lrs = dict(stn=float(sys.argv[4]), shn=float(sys.argv[5]), joint=float(sys.argv[6]))
    samples = make_synthetic_dataset(20, seed=200, config=SYNTH)
    model_cfg = ModelConfig(
        loc_widths=(8, 16, 24, 32, 48), fpn_width=16, hg_stacks=2, hg_channels=24
    )
    overrides = {
        "plateau_patience": 12,
        "plateau_eps": 1e-3,
        "batch_size": 10,
        "augment": False,
        "log_every": 50,
    }
    for stage in ("stn", "shn", "joint"):
        overrides[stage] = {"max_epochs": n_epochs[stage], "lr0": lrs[stage]}
    t0 = time.time()
    with tempfile.TemporaryDirectory() as d:
        # memorization oracle: validate on the training samples themselves
        results = run_variant(
            Variant.FULL, model_cfg, samples, samples, d, seed=1,
            overrides=overrides,
        )
        total_steps = sum(r.state.step for r in results.values())
        model = results["joint"].model
        mean_err, max_err = decoded_roi_error(model, samples)
        for stage, r in results.items():
            print(f"  {stage}: steps={r.state.step} best_val={r.state.best_val_loss:.5f}")
        print(
            f"steps={total_steps} mean_err={mean_err:.2f} max_err={max_err:.2f} "
            f"ROI px, wall={time.time() - t0:.0f}s"
        )


if __name__ == "__main__":
    main()

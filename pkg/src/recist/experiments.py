"""Desk-scale experiment drivers for the acceptance suite.

Two standard runs:

* the overfit oracle: memorize a handful of synthetic lesions with the
  full staged recipe and measure decoded endpoint error on them;
* the scaled ablation: train all four variants on the same split and
  score them against ground truth on a held-out set.

Model sizes and stage budgets here are deliberately tiny; sample counts,
step caps and orderings are what the acceptance criteria check.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import SynthConfig, make_synthetic_dataset
from .evaluation import (
    AblationConfig,
    MetricsTable,
    annotate_rois,
    evaluation_rois,
    run_ablation,
)
from .networks import ModelConfig
from .training import Variant, final_checkpoint_path, run_variant

EXPERIMENT_SYNTH = SynthConfig(image_size=192)

TOY_MODEL = ModelConfig(
    loc_widths=(8, 16, 32, 64, 128), fpn_width=32, hg_stacks=2, hg_channels=32
)


@dataclass
class StageBudget:
    max_epochs: int
    lr0: float


@dataclass
class ExperimentPlan:
    """Per-stage budgets plus the shared optimization knobs."""

    stn: StageBudget
    shn: StageBudget
    joint: StageBudget
    batch_size: int = 16
    optimizer: str = "adam"  # desk-scale default; see the decisions notes
    plateau_patience: int = 20
    plateau_eps: float = 5e-4
    augment: bool = False
    log_every: int = 100

    def overrides(self) -> dict:
        base = {
            "batch_size": self.batch_size,
            "optimizer": self.optimizer,
            "plateau_patience": self.plateau_patience,
            "plateau_eps": self.plateau_eps,
            "augment": self.augment,
            "log_every": self.log_every,
        }
        for stage in ("stn", "shn", "joint"):
            budget: StageBudget = getattr(self, stage)
            base[stage] = {"max_epochs": budget.max_epochs, "lr0": budget.lr0}
        return base


def decoded_roi_error(model, rois) -> tuple[float, float]:
    """Mean/max endpoint distance (ROI pixels) between decode and truth."""
    decoded = annotate_rois(model, rois)
    errs = []
    for roi, d in zip(rois, decoded):
        gt = roi.annotation.ordered_keypoints()
        est = d.roi_annotation.endpoints()
        errs.extend(np.linalg.norm(est - gt, axis=1))
    return float(np.mean(errs)), float(np.max(errs))


def overfit_oracle(
    plan: ExperimentPlan,
    out_dir,
    n_samples: int = 20,
    seed: int = 1,
    data_seed: int = 200,
    model_config: ModelConfig = TOY_MODEL,
) -> dict:
    """Train the full variant to memorize ``n_samples`` lesions.

    The samples train as their fixed evaluation views (pre-cropped ROIs)
    and validation runs on the training samples themselves: this is a
    memorization oracle. Returns the step count and decode error on
    those samples.
    """
    samples = make_synthetic_dataset(n_samples, seed=data_seed, config=EXPERIMENT_SYNTH)
    rois = evaluation_rois(samples, seed=0)
    results = run_variant(
        Variant.FULL,
        model_config,
        rois,
        rois,
        out_dir,
        seed=seed,
        overrides=plan.overrides(),
    )
    total_steps = sum(r.state.step for r in results.values())
    mean_err, max_err = decoded_roi_error(results["joint"].model, rois)
    return {
        "steps": total_steps,
        "mean_roi_px": mean_err,
        "max_roi_px": max_err,
        "per_stage_steps": {k: r.state.step for k, r in results.items()},
    }


def scaled_ablation(
    plan: ExperimentPlan,
    out_dir,
    n_train: int = 500,
    n_test: int = 100,
    n_val: int = 50,
    seed: int = 1,
    data_seed: int = 300,
    model_config: ModelConfig = TOY_MODEL,
    variants: tuple[Variant, ...] = tuple(Variant),
) -> tuple[MetricsTable, dict]:
    """Train every variant on one split and score on held-out lesions.

    The validation samples come out of the training pool; the test set is
    disjoint. All variants see identical data and seeds.
    """
    out_dir = Path(out_dir)
    pool = make_synthetic_dataset(n_train, seed=data_seed, config=EXPERIMENT_SYNTH)
    test = make_synthetic_dataset(n_test, seed=data_seed + 1, config=EXPERIMENT_SYNTH)
    train, val = pool[:-n_val], pool[-n_val:]

    configs = []
    for variant in variants:
        run_variant(
            variant,
            model_config,
            train,
            val,
            out_dir / variant.value,
            seed=seed,
            overrides=plan.overrides(),
        )
        configs.append(
            AblationConfig(variant, final_checkpoint_path(variant, out_dir / variant.value))
        )
    table, metadata = run_ablation(configs, test, seed=0)
    metadata["n_train"] = len(train)
    metadata["n_val"] = len(val)
    metadata["n_test"] = len(test)
    return table, metadata

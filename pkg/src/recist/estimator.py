"""Estimator facade: fit on lesion samples, predict from image + box.

Wraps the staged training recipe and the inference pipeline behind the
familiar fit/predict surface so the annotator composes with generic
tooling (`get_params`/`set_params` follow the scikit-learn convention:
constructor arguments are stored verbatim and learned state lives in
underscore-suffixed attributes).
"""

from __future__ import annotations

import inspect
import tempfile
from pathlib import Path

from .annotation import RecistAnnotation
from .data import LesionSample
from .errors import InvalidParameterError, NotFittedError
from .inference import InferencePipeline, InferenceResult
from .networks import ModelConfig
from .training import (
    TrainState,
    Variant,
    final_checkpoint_path,
    load_checkpoint,
    run_variant,
    save_checkpoint,
)


class RecistEstimator:
    """Semi-automatic RECIST annotator with a fit/predict interface."""

    def __init__(
        self,
        variant: str = "full",
        loc_widths: tuple[int, ...] = (16, 32, 64, 128, 256),
        fpn_width: int = 64,
        hg_stacks: int = 2,
        hg_depth: int = 4,
        hg_channels: int = 64,
        lr0: float = 5e-4,
        momentum: float = 0.9,
        batch_size: int = 16,
        plateau_patience: int = 5,
        plateau_eps: float = 1e-3,
        max_epochs: int = 200,
        augment: bool = True,
        seed: int = 0,
        work_dir: str | None = None,
    ):
        self.variant = variant
        self.loc_widths = loc_widths
        self.fpn_width = fpn_width
        self.hg_stacks = hg_stacks
        self.hg_depth = hg_depth
        self.hg_channels = hg_channels
        self.lr0 = lr0
        self.momentum = momentum
        self.batch_size = batch_size
        self.plateau_patience = plateau_patience
        self.plateau_eps = plateau_eps
        self.max_epochs = max_epochs
        self.augment = augment
        self.seed = seed
        self.work_dir = work_dir

    # -- scikit-learn parameter plumbing ------------------------------------

    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return [name for name in sig.parameters if name != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "RecistEstimator":
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise InvalidParameterError(
                    f"unknown parameter {name!r} for RecistEstimator"
                )
            setattr(self, name, value)
        return self

    # -- fitting -------------------------------------------------------------

    def _model_config(self) -> ModelConfig:
        variant = Variant(self.variant)
        return ModelConfig(
            loc_widths=tuple(self.loc_widths),
            fpn_width=self.fpn_width,
            hg_stacks=self.hg_stacks,
            hg_depth=self.hg_depth,
            hg_channels=self.hg_channels,
            use_stn=variant.use_stn,
        )

    def fit(
        self,
        train_samples: list[LesionSample],
        val_samples: list[LesionSample] | None = None,
        stage_overrides: dict | None = None,
    ) -> "RecistEstimator":
        """Train every stage of the configured variant.

        Without an explicit validation set the last tenth of the training
        samples (at least one) is held out.
        """
        if not train_samples:
            raise InvalidParameterError("cannot fit on an empty training set")
        if val_samples is None:
            n_val = max(1, len(train_samples) // 10)
            if len(train_samples) <= n_val:
                raise InvalidParameterError("too few samples to split validation")
            train_samples, val_samples = (
                train_samples[:-n_val],
                train_samples[-n_val:],
            )
        variant = Variant(self.variant)
        overrides = {
            "lr0": self.lr0,
            "momentum": self.momentum,
            "batch_size": self.batch_size,
            "plateau_patience": self.plateau_patience,
            "plateau_eps": self.plateau_eps,
            "max_epochs": self.max_epochs,
            "augment": self.augment,
        }
        if stage_overrides:
            overrides.update(stage_overrides)

        work_dir = self.work_dir or tempfile.mkdtemp(prefix="recist-fit-")
        results = run_variant(
            variant,
            self._model_config(),
            train_samples,
            val_samples,
            work_dir,
            seed=self.seed,
            overrides=overrides,
        )
        final_stage = variant.stages[-1]
        self.model_ = results[final_stage].model
        self.checkpoint_path_ = final_checkpoint_path(variant, work_dir)
        self.pipeline_ = InferencePipeline.from_checkpoint(self.checkpoint_path_)
        self.train_results_ = results
        return self

    # -- inference -----------------------------------------------------------

    def _require_fitted(self) -> InferencePipeline:
        pipeline = getattr(self, "pipeline_", None)
        if pipeline is None:
            raise NotFittedError("call fit() or load() before predict()")
        return pipeline

    def predict(self, image, bbox) -> RecistAnnotation:
        """RECIST annotation (original-image pixels) for one image + box."""
        return self._require_fitted().annotate(image, bbox).annotation

    def predict_full(self, image, bbox) -> InferenceResult:
        """Like :meth:`predict` but with confidence, mask contour, theta."""
        return self._require_fitted().annotate(image, bbox)

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> str:
        """Write the fitted model as a checkpoint archive."""
        pipeline = self._require_fitted()
        variant = Variant(self.variant)
        kind = "shn" if variant is Variant.SHN_ONLY else "joint"
        return save_checkpoint(
            path, kind, pipeline.model, pipeline.model.config, None, TrainState()
        )

    @classmethod
    def load(cls, path, **params) -> "RecistEstimator":
        """Rebuild a predict-ready estimator from a checkpoint archive."""
        ckpt = load_checkpoint(path)
        est = cls(**params)
        est.pipeline_ = InferencePipeline(ckpt.build_model(), ckpt.version)
        est.model_ = est.pipeline_.model
        est.checkpoint_path_ = Path(path)
        return est

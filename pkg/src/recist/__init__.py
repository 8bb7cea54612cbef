"""Semi-automatic RECIST annotation.

Cascade of a spatial-transformer lesion normalizer and a stacked-hourglass
keypoint estimator, plus the training, evaluation and serving machinery
around it.
"""

from .annotation import CropRecord, RecistAnnotation
from .data import LesionSample, SynthConfig, load_manifest, make_synthetic_dataset
from .estimator import RecistEstimator
from .geometry import AffineParams
from .inference import InferencePipeline
from .networks import ModelConfig
from .training import TrainConfig, Variant, train_stage

__all__ = [
    "AffineParams",
    "CropRecord",
    "InferencePipeline",
    "LesionSample",
    "ModelConfig",
    "RecistAnnotation",
    "RecistEstimator",
    "SynthConfig",
    "TrainConfig",
    "Variant",
    "__version__",
    "load_manifest",
    "make_synthetic_dataset",
    "train_stage",
]

__version__ = "0.1.0"

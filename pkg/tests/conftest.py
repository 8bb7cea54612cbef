"""Shared fixtures: tiny untrained checkpoints and synthetic images."""

import io

import numpy as np
import pytest
import torch
from PIL import Image

from recist.data import SynthConfig, synthesize_lesion
from recist.networks import ModelConfig
from recist.training import TrainState, save_checkpoint

TINY_FULL = ModelConfig(
    loc_widths=(8, 16, 24, 32, 48), fpn_width=16, hg_stacks=1, hg_depth=4, hg_channels=8
)


@pytest.fixture(scope="session")
def tiny_joint_ckpt(tmp_path_factory):
    """Untrained full-cascade checkpoint; enough for contract tests."""
    torch.manual_seed(7)
    model = TINY_FULL.build()
    path = tmp_path_factory.mktemp("ckpt") / "joint.ckpt"
    save_checkpoint(path, "joint", model, TINY_FULL, None, TrainState())
    return path


@pytest.fixture(scope="session")
def synth_sample():
    rng = np.random.default_rng(100)
    return synthesize_lesion(rng, SynthConfig(image_size=160, long_px=(30.0, 60.0)))


def png_bytes(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(image, mode="L").save(buf, format="PNG")
    return buf.getvalue()

"""Loss components and their staged combinations.

Every component is normalized into [0, 1]:

* mask loss: MSE between [0, 1] mask rasters, bounded by construction;
* parameter loss: squared differences after mapping each parameter onto
  [-1, 1] over its admissible range (translations / 2, angle / pi, scale
  via log(s) / log 40), averaged over the four parameters;
* heatmap loss: MSE between [0, 1] heatmaps, averaged over stacks;
* orthogonality loss: squared cosine between the two axis directions
  read off the final heatmaps by soft-argmax, 0 iff they are orthogonal.

Stage weightings: mask-heavy warmup (10:1), parameter-heavy refinement
(1:10), equal contributions for the hourglass pair and for joint training.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass

import torch
from torch import Tensor

from .errors import InvalidParameterError

_LOG_S_SPAN = math.log(40.0)  # admissible scales span a factor of 40


class Phase(enum.Enum):
    STN_WARMUP = "stn_warmup"
    STN_REFINE = "stn_refine"
    SHN_ONLY = "shn_only"
    JOINT = "joint"


def loss_lrp(mask_pred: Tensor, mask_gt: Tensor) -> Tensor:
    """Mean squared error between predicted and ground-truth masks."""
    if mask_pred.shape != mask_gt.shape:
        raise InvalidParameterError(
            f"mask shapes differ: {tuple(mask_pred.shape)} vs {tuple(mask_gt.shape)}"
        )
    return ((mask_pred - mask_gt) ** 2).mean()


def loss_tpp(theta_pred: Tensor, theta_gt: Tensor) -> Tensor:
    """Range-normalized MSE over the four transform parameters.

    Differences are scaled so each admissible-box extreme pair lands at
    magnitude 1 (then clamped there), which keeps the mean in [0, 1].
    """
    if theta_pred.shape != theta_gt.shape or theta_pred.shape[-1] != 4:
        raise InvalidParameterError("theta tensors must both be (..., 4)")
    if (theta_pred[..., 3] <= 0).any() or (theta_gt[..., 3] <= 0).any():
        raise InvalidParameterError("scale parameters must be positive")
    d_tx = (theta_pred[..., 0] - theta_gt[..., 0]) / 2.0
    d_ty = (theta_pred[..., 1] - theta_gt[..., 1]) / 2.0
    d_alpha = (theta_pred[..., 2] - theta_gt[..., 2]) / math.pi
    d_s = (torch.log(theta_pred[..., 3]) - torch.log(theta_gt[..., 3])) / _LOG_S_SPAN
    terms = torch.stack([d_tx, d_ty, d_alpha, d_s], dim=-1).clamp(-1.0, 1.0)
    return (terms**2).mean()


def loss_hm(pred_stacks: list[Tensor], gt: Tensor) -> Tensor:
    """Heatmap MSE averaged over stacks (intermediate supervision)."""
    if not pred_stacks:
        raise InvalidParameterError("need at least one heatmap stack")
    for p in pred_stacks:
        if p.shape != gt.shape:
            raise InvalidParameterError(
                f"heatmap shapes differ: {tuple(p.shape)} vs {tuple(gt.shape)}"
            )
    total = sum(((p - gt) ** 2).mean() for p in pred_stacks)
    return total / len(pred_stacks)


def soft_argmax(maps: Tensor, temperature: float = 0.1) -> Tensor:
    """Soft keypoint positions in normalized map coordinates.

    maps: (..., H, W) -> (..., 2) expectation of the corner-aligned
    coordinate under the spatial softmax of map / temperature.
    """
    h, w = maps.shape[-2:]
    flat = maps.reshape(*maps.shape[:-2], h * w)
    weights = torch.softmax(flat / temperature, dim=-1)
    xs = torch.linspace(-1.0, 1.0, w, dtype=maps.dtype, device=maps.device)
    ys = torch.linspace(-1.0, 1.0, h, dtype=maps.dtype, device=maps.device)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    ex = (weights * gx.reshape(-1)).sum(dim=-1)
    ey = (weights * gy.reshape(-1)).sum(dim=-1)
    return torch.stack([ex, ey], dim=-1)


def loss_cos(pred_final: Tensor, temperature: float = 0.1) -> Tensor:
    """Squared cosine between the long and short axis directions.

    ``pred_final`` is the last stack's heatmap set (B, 4, H, W) ordered
    long-left, long-right, short-top, short-bottom. Endpoints come from
    soft-argmax, so the loss is differentiable end to end. Zero iff the
    axes are orthogonal, one when parallel.
    """
    if pred_final.dim() == 3:
        pred_final = pred_final.unsqueeze(0)
    if pred_final.shape[1] != 4:
        raise InvalidParameterError("orthogonality loss needs the 4 keypoint maps")
    mass = pred_final.sum(dim=(-2, -1))
    if (mass <= 0).any():
        raise InvalidParameterError("heatmap with zero total mass")
    pts = soft_argmax(pred_final, temperature)  # (B, 4, 2)
    u = pts[:, 1] - pts[:, 0]
    v = pts[:, 3] - pts[:, 2]
    u = u / (u.norm(dim=-1, keepdim=True) + 1e-12)
    v = v / (v.norm(dim=-1, keepdim=True) + 1e-12)
    return ((u * v).sum(dim=-1) ** 2).mean()


def combine_stn(l_lrp: Tensor | float, l_tpp: Tensor | float, phase: Phase):
    """Stage weighting for the localization losses: 10:1 then 1:10."""
    if phase == Phase.STN_WARMUP:
        return 10.0 * l_lrp + l_tpp
    if phase == Phase.STN_REFINE:
        return l_lrp + 10.0 * l_tpp
    raise InvalidParameterError(f"not an STN phase: {phase}")


def combine_shn(l_hm, l_cos):
    """Heatmap and orthogonality losses contribute equally."""
    return l_hm + l_cos


def combine_joint(l_lrp, l_tpp, l_hm, l_cos):
    """All four losses contribute equally during joint training."""
    return l_lrp + l_tpp + l_hm + l_cos


@dataclass
class LossReport:
    """One logging record; serialized as a JSON line."""

    step: int
    phase: Phase
    l_lrp: float
    l_tpp: float
    l_hm: float
    l_cos: float
    total: float

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "step": self.step,
                "phase": self.phase.value,
                "l_lrp": self.l_lrp,
                "l_tpp": self.l_tpp,
                "l_hm": self.l_hm,
                "l_cos": self.l_cos,
                "total": self.total,
            }
        )

    @classmethod
    def from_json_line(cls, line: str) -> "LossReport":
        d = json.loads(line)
        return cls(
            step=d["step"],
            phase=Phase(d["phase"]),
            l_lrp=d["l_lrp"],
            l_tpp=d["l_tpp"],
            l_hm=d["l_hm"],
            l_cos=d["l_cos"],
            total=d["total"],
        )

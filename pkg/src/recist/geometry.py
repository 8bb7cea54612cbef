"""Differentiable affine geometry for lesion region normalization.

The transform family is translation * rotation * isotropic scaling,
parametrized by theta = {tx, ty, alpha, s}. Composing the three matrices
gives the homogeneous form

    [[s*cos(a), -s*sin(a), tx],
     [s*sin(a),  s*cos(a), ty],
     [0,         0,        1 ]]

whose top two rows are the 2x3 sampler matrix. The sampler matrix maps
TARGET (transformed-image) coordinates to SOURCE coordinates, so warping
an image means reading the source at ``Theta @ [x_t, y_t, 1]`` for every
target pixel.

Coordinates are normalized and corner-aligned: the centers of the corner
pixels sit at exactly +-1 on both axes.

Scalar helpers (``compose_affine``, ``generate_grid``, ``map_points``)
take an :class:`AffineParams` and return float64 numpy arrays. The
batched tensor versions (``sampler_matrix``, ``affine_grid``,
``map_points_t``, ``bilinear_sample``) are differentiable end to end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor

from .annotation import RecistAnnotation
from .errors import DegenerateAnnotationError, InvalidParameterError

__all__ = [
    "AffineParams",
    "CANONICAL_SPAN",
    "affine_grid",
    "bilinear_sample",
    "canonical_theta",
    "compose_affine",
    "compose_params",
    "generate_grid",
    "invert",
    "map_points",
    "map_points_t",
    "sampler_matrix",
    "theta_to_sampler",
]

# Width, in normalized target coordinates, that the long diameter occupies
# in the canonical frame: half the transformed image.
CANONICAL_SPAN = 1.0

_TWO_PI = 2.0 * math.pi

# Coordinates this close to an integer pixel index (in pixel units) are
# snapped onto it before interpolation, so resampling through an exact
# lattice is bit-exact despite normalize/denormalize rounding.
_PIXEL_SNAP = 1e-6


def _wrap_angle(alpha: float) -> float:
    """Wrap to the half-open interval (-pi, pi]."""
    a = math.remainder(alpha, _TWO_PI)
    if a <= -math.pi:
        a += _TWO_PI
    return a


@dataclass(frozen=True)
class AffineParams:
    """Transform parameters theta = {tx, ty, alpha, s}.

    ``tx``/``ty`` are translations in normalized target-frame units,
    ``alpha`` the rotation in radians (stored wrapped to (-pi, pi]) and
    ``s`` the isotropic scale, which must be positive.
    """

    tx: float
    ty: float
    alpha: float
    s: float

    def __post_init__(self):
        if not (self.s > 0) or not math.isfinite(self.s):
            raise InvalidParameterError(f"scale must be positive, got {self.s!r}")
        for name in ("tx", "ty", "alpha"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidParameterError(f"{name} must be finite")
        object.__setattr__(self, "alpha", _wrap_angle(float(self.alpha)))
        object.__setattr__(self, "tx", float(self.tx))
        object.__setattr__(self, "ty", float(self.ty))
        object.__setattr__(self, "s", float(self.s))

    @classmethod
    def identity(cls) -> "AffineParams":
        return cls(0.0, 0.0, 0.0, 1.0)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.tx, self.ty, self.alpha, self.s)

    def to_tensor(self, dtype=torch.float64) -> Tensor:
        return torch.tensor(self.as_tuple(), dtype=dtype)

    @classmethod
    def from_tensor(cls, t: Tensor) -> "AffineParams":
        tx, ty, alpha, s = (float(v) for v in t.reshape(4))
        return cls(tx, ty, alpha, s)


def compose_affine(theta: AffineParams) -> np.ndarray:
    """The 3x3 homogeneous matrix Translation @ Rotation @ Scaling."""
    c = math.cos(theta.alpha)
    sn = math.sin(theta.alpha)
    s = theta.s
    return np.array(
        [
            [s * c, -s * sn, theta.tx],
            [s * sn, s * c, theta.ty],
            [0.0, 0.0, 1.0],
        ],
        dtype=np.float64,
    )


def theta_to_sampler(theta: AffineParams) -> np.ndarray:
    """The 2x3 sampler matrix: the top two rows of :func:`compose_affine`."""
    return compose_affine(theta)[:2]


def invert(theta: AffineParams) -> AffineParams:
    """Parameters of the inverse transform (the family is closed)."""
    c = math.cos(theta.alpha)
    sn = math.sin(theta.alpha)
    inv_s = 1.0 / theta.s
    tx = -(c * theta.tx + sn * theta.ty) * inv_s
    ty = (sn * theta.tx - c * theta.ty) * inv_s
    return AffineParams(tx, ty, -theta.alpha, inv_s)


def compose_params(first: AffineParams, second: AffineParams) -> AffineParams:
    """Parameters of ``first`` applied after ``second``.

    The similarity family is closed under composition:
    ``compose_affine(compose_params(a, b)) == compose_affine(a) @
    compose_affine(b)``.
    """
    c = math.cos(first.alpha)
    sn = math.sin(first.alpha)
    tx = first.tx + first.s * (c * second.tx - sn * second.ty)
    ty = first.ty + first.s * (sn * second.tx + c * second.ty)
    return AffineParams(tx, ty, first.alpha + second.alpha, first.s * second.s)


def sampler_matrix(theta: Tensor) -> Tensor:
    """Batched, differentiable 2x3 sampler matrices.

    theta: (..., 4) tensor ordered [tx, ty, alpha, s] -> (..., 2, 3).
    """
    tx, ty, alpha, s = theta.unbind(-1)
    c = s * torch.cos(alpha)
    sn = s * torch.sin(alpha)
    row0 = torch.stack([c, -sn, tx], dim=-1)
    row1 = torch.stack([sn, c, ty], dim=-1)
    return torch.stack([row0, row1], dim=-2)


def _target_lattice(height: int, width: int, dtype, device=None) -> Tensor:
    """Homogeneous corner-aligned target lattice, shape (H, W, 3)."""
    xs = torch.linspace(-1.0, 1.0, width, dtype=dtype, device=device)
    ys = torch.linspace(-1.0, 1.0, height, dtype=dtype, device=device)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    ones = torch.ones_like(gx)
    return torch.stack([gx, gy, ones], dim=-1)


def affine_grid(theta: Tensor, height: int, width: int) -> Tensor:
    """Sampling grid of source coordinates for every target pixel.

    theta: (B, 4) -> grid (B, H, W, 2) with grid[b, i, j] =
    Theta_b @ [x_j, y_i, 1]. Differentiable with respect to theta.
    """
    if height < 2 or width < 2:
        raise InvalidParameterError(
            f"grid must be at least 2x2, got {height}x{width}"
        )
    mat = sampler_matrix(theta)
    lattice = _target_lattice(height, width, theta.dtype, theta.device)
    return torch.einsum("bij,hwj->bhwi", mat, lattice)


def generate_grid(theta: AffineParams, height: int, width: int) -> np.ndarray:
    """Scalar-parameter version of :func:`affine_grid`; float64 (H, W, 2)."""
    grid = affine_grid(theta.to_tensor()[None], height, width)
    return grid[0].numpy()


def map_points_t(theta: Tensor, points: Tensor) -> Tensor:
    """Map target-frame points to source-frame points, batched.

    theta: (B, 4); points: (B, N, 2) or (N, 2) -> same leading shape.
    """
    mat = sampler_matrix(theta)
    if points.dim() == 2:
        points = points.unsqueeze(0).expand(mat.shape[0], -1, -1)
    rot = mat[..., :2]
    trans = mat[..., 2]
    return torch.einsum("bij,bnj->bni", rot, points) + trans.unsqueeze(1)


def map_points(theta: AffineParams, points) -> np.ndarray:
    """Map target-frame normalized points through the sampler matrix.

    Accepts a single (x, y) pair or an (N, 2) array; returns float64 of
    the same shape.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    mat = theta_to_sampler(theta)
    out = pts.reshape(-1, 2) @ mat[:, :2].T + mat[:, 2]
    return out[0] if single else out.reshape(pts.shape)


def _bilinear_sample_bchw(image: Tensor, grid: Tensor) -> Tensor:
    """Core sampler: image (B, C, Hs, Ws), grid (B, H, W, 2) -> (B, C, H, W).

    Coordinates outside [-1, 1] read zeros; everything is differentiable
    with respect to both image values and grid coordinates.
    """
    b, c, hs, ws = image.shape
    h, w = grid.shape[1:3]

    xp = (grid[..., 0] + 1.0) * ((ws - 1) / 2.0)
    yp = (grid[..., 1] + 1.0) * ((hs - 1) / 2.0)
    xr = torch.round(xp)
    yr = torch.round(yp)
    xp = torch.where((xp - xr).abs() <= _PIXEL_SNAP, xr, xp)
    yp = torch.where((yp - yr).abs() <= _PIXEL_SNAP, yr, yp)

    x0 = torch.floor(xp)
    y0 = torch.floor(yp)
    fx = xp - x0
    fy = yp - y0

    flat = image.reshape(b, c, hs * ws)
    out = torch.zeros(b, c, h, w, dtype=image.dtype, device=image.device)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            weight = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            valid = (xi >= 0) & (xi <= ws - 1) & (yi >= 0) & (yi <= hs - 1)
            idx = (
                yi.clamp(0, hs - 1) * ws + xi.clamp(0, ws - 1)
            ).long().reshape(b, 1, h * w).expand(-1, c, -1)
            vals = flat.gather(2, idx).reshape(b, c, h, w)
            out = out + vals * (weight * valid.to(image.dtype)).unsqueeze(1)
    return out


def bilinear_sample(image, grid):
    """Sample ``image`` at the normalized source coordinates in ``grid``.

    ``image`` may be (Hs, Ws) or (B, C, Hs, Ws); ``grid`` (H, W, 2) or
    (B, H, W, 2). Numpy input gives float64 numpy output of matching
    rank; tensor input stays a tensor on the autograd tape.
    """
    numpy_in = isinstance(image, np.ndarray)
    img_t = torch.as_tensor(image, dtype=torch.float64) if numpy_in else image
    grid_t = (
        torch.as_tensor(grid, dtype=img_t.dtype)
        if isinstance(grid, np.ndarray)
        else grid
    )
    if not torch.isfinite(grid_t).all():
        raise InvalidParameterError("sampling grid contains non-finite values")

    single = img_t.dim() == 2
    if single:
        img_t = img_t[None, None]
        if grid_t.dim() == 3:
            grid_t = grid_t[None]
    elif img_t.dim() != 4 or grid_t.dim() != 4:
        raise InvalidParameterError(
            f"expected (H,W)+(H,W,2) or (B,C,H,W)+(B,H,W,2) shapes, got "
            f"{tuple(img_t.shape)} and {tuple(grid_t.shape)}"
        )
    out = _bilinear_sample_bchw(img_t, grid_t)
    if single:
        out = out[0, 0]
    return out.numpy() if numpy_in else out


def canonical_theta(
    annotation: RecistAnnotation, span: float = CANONICAL_SPAN
) -> AffineParams:
    """Ground-truth transform parameters for a lesion annotation.

    The annotation must be in ROI normalized coordinates. The returned
    theta maps the canonical long-axis endpoints (-span/2, 0) and
    (+span/2, 0) onto the annotated endpoints: alpha is the long-axis
    angle folded into (-pi/2, pi/2], s the long-diameter length divided
    by ``span``, and (tx, ty) the long-axis midpoint. Sampling with this
    theta centers the lesion and makes the long diameter horizontal.
    """
    (x1, y1), (x2, y2) = annotation.long_p1, annotation.long_p2
    dx = x2 - x1
    dy = y2 - y1
    length = math.hypot(dx, dy)
    if length <= 0:
        raise DegenerateAnnotationError("long-axis endpoints coincide")
    alpha = math.atan2(dy, dx)
    # A diameter is an unordered pair: fold the angle into (-pi/2, pi/2]
    # by flipping the endpoint order when needed.
    if alpha > math.pi / 2:
        alpha -= math.pi
    elif alpha <= -math.pi / 2:
        alpha += math.pi
    return AffineParams(
        tx=(x1 + x2) / 2.0,
        ty=(y1 + y2) / 2.0,
        alpha=alpha,
        s=length / span,
    )

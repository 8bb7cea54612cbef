"""The two learnable networks and their wiring.

``LocalizationNet`` predicts a coarse lesion mask (LRP head) and the four
affine transform parameters (TPP head) from a 128x128 ROI. Its backbone
is a five-stage residual net at configurable toy widths; a top-down
pathway with 1x1 lateral projections and 3x3 smoothing brings the coarse
maps back to stride 4, where a 5-channel projection feeds both heads.

``StackedHourglass`` maps the transformed ROI to per-keypoint heatmaps at
half input resolution, one set per stack so every stack can be supervised.

Raw TPP outputs are decoded into valid parameters: translations are
tanh-bounded to [-1, 1], the angle tanh-bounded to [-pi/2, pi/2] and the
scale is exp of a clamped value, so s > 0 always holds.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import Tensor, nn

from . import geometry
from .errors import InvalidParameterError

THETA_SCALE_RANGE = (0.05, 2.0)
_LOG_S_LO = math.log(THETA_SCALE_RANGE[0])
_LOG_S_HI = math.log(THETA_SCALE_RANGE[1])


def decode_theta(raw: Tensor) -> Tensor:
    """Map raw head outputs (..., 4) to valid [tx, ty, alpha, s]."""
    tx = torch.tanh(raw[..., 0])
    ty = torch.tanh(raw[..., 1])
    alpha = torch.tanh(raw[..., 2]) * (math.pi / 2)
    s = torch.exp(raw[..., 3].clamp(_LOG_S_LO, _LOG_S_HI))
    return torch.stack([tx, ty, alpha, s], dim=-1)


def encode_theta(theta: Tensor) -> Tensor:
    """Inverse of :func:`decode_theta` over the admissible parameter box."""
    eps = 1e-7
    tx = torch.atanh(theta[..., 0].clamp(-1 + eps, 1 - eps))
    ty = torch.atanh(theta[..., 1].clamp(-1 + eps, 1 - eps))
    alpha = torch.atanh((theta[..., 2] / (math.pi / 2)).clamp(-1 + eps, 1 - eps))
    s = torch.log(theta[..., 3]).clamp(_LOG_S_LO, _LOG_S_HI)
    return torch.stack([tx, ty, alpha, s], dim=-1)


def normalize_image(x: Tensor) -> Tensor:
    """Per-image zero-mean unit-variance normalization over (B, 1, H, W)."""
    mean = x.mean(dim=(-2, -1), keepdim=True)
    std = x.std(dim=(-2, -1), keepdim=True)
    return (x - mean) / (std + 1e-6)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def _conv_bn(cin: int, cout: int, kernel: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel, stride=stride, padding=kernel // 2, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class BasicBlock(nn.Module):
    """Two 3x3 convolutions with a residual connection."""

    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.relu = nn.ReLU(inplace=True)
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride=stride, bias=False),
                nn.BatchNorm2d(cout),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x: Tensor) -> Tensor:
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + self.shortcut(x))


class Backbone(nn.Module):
    """Stem plus four residual stages at strides 4, 8, 16 and 32."""

    def __init__(self, widths=(16, 32, 64, 128, 256)):
        super().__init__()
        w0, w1, w2, w3, w4 = widths
        self.stem = nn.Sequential(
            _conv_bn(1, w0, 7, stride=2), nn.MaxPool2d(3, stride=2, padding=1)
        )
        self.stage1 = nn.Sequential(BasicBlock(w0, w1), BasicBlock(w1, w1))
        self.stage2 = nn.Sequential(BasicBlock(w1, w2, 2), BasicBlock(w2, w2))
        self.stage3 = nn.Sequential(BasicBlock(w2, w3, 2), BasicBlock(w3, w3))
        self.stage4 = nn.Sequential(BasicBlock(w3, w4, 2), BasicBlock(w4, w4))

    def forward(self, x: Tensor) -> list[Tensor]:
        c1 = self.stage1(self.stem(x))
        c2 = self.stage2(c1)
        c3 = self.stage3(c2)
        c4 = self.stage4(c3)
        return [c1, c2, c3, c4]


class TopDown(nn.Module):
    """Top-down pathway: upsample by 2, add 1x1 lateral, smooth with 3x3."""

    def __init__(self, in_widths, width: int):
        super().__init__()
        self.laterals = nn.ModuleList(
            nn.Conv2d(w, width, 1) for w in in_widths
        )
        self.smooth = nn.ModuleList(
            nn.Conv2d(width, width, 3, padding=1) for _ in in_widths[:-1]
        )
        self.up = nn.Upsample(scale_factor=2, mode="nearest")

    def forward(self, feats: list[Tensor]) -> Tensor:
        top = self.laterals[-1](feats[-1])
        for i in range(len(feats) - 2, -1, -1):
            top = self.smooth[i](self.up(top) + self.laterals[i](feats[i]))
        return top


@dataclass
class LocalizationOutput:
    """What the localization network predicts for a batch of ROIs."""

    mask_pred: Tensor  # (B, Hm, Wm) in [0, 1]
    theta: Tensor  # (B, 4) decoded parameters, s > 0
    raw_theta: Tensor  # (B, 4) pre-decoding head outputs


class LocalizationNet(nn.Module):
    """Backbone + top-down pyramid + LRP mask head + TPP parameter head."""

    def __init__(self, widths=(16, 32, 64, 128, 256), fpn_width=64, input_size=128):
        super().__init__()
        if input_size % 32 != 0:
            raise InvalidParameterError("input size must be divisible by 32")
        self.input_size = input_size
        self.mask_size = input_size // 4
        self.backbone = Backbone(widths)
        self.topdown = TopDown(widths[1:], fpn_width)
        self.head = nn.Conv2d(fpn_width, 5, 1)
        # the four TPP channels feed the fully connected layer directly
        self.tpp_fc = nn.Linear(4 * self.mask_size * self.mask_size, 4)
        # identity-centered start: raw zeros decode to {0, 0, 0, 1}
        nn.init.zeros_(self.tpp_fc.weight)
        nn.init.zeros_(self.tpp_fc.bias)

    def forward(self, x: Tensor) -> LocalizationOutput:
        if x.dim() != 4 or x.shape[1] != 1 or x.shape[-2:] != (
            self.input_size,
            self.input_size,
        ):
            raise InvalidParameterError(
                f"expected (B, 1, {self.input_size}, {self.input_size}) input, "
                f"got {tuple(x.shape)}"
            )
        maps = self.head(self.topdown(self.backbone(x)))
        mask = torch.sigmoid(maps[:, 0])
        raw = self.tpp_fc(maps[:, 1:5].flatten(1))
        return LocalizationOutput(mask_pred=mask, theta=decode_theta(raw), raw_theta=raw)


class Hourglass(nn.Module):
    """One symmetric encoder-decoder with skip connections per level."""

    def __init__(self, depth: int, channels: int):
        super().__init__()
        self.depth = depth
        self.skip = BasicBlock(channels, channels)
        self.pool = nn.MaxPool2d(2)
        self.down = BasicBlock(channels, channels)
        if depth > 1:
            self.inner: nn.Module = Hourglass(depth - 1, channels)
        else:
            self.inner = BasicBlock(channels, channels)
        self.out = BasicBlock(channels, channels)
        self.up = nn.Upsample(scale_factor=2, mode="nearest")

    def forward(self, x: Tensor) -> Tensor:
        skip = self.skip(x)
        low = self.out(self.inner(self.down(self.pool(x))))
        return skip + self.up(low)


class StackedHourglass(nn.Module):
    """Stacked hourglasses, one heatmap set per stack.

    A stride-2 stem halves the input resolution, so a 128x128 ROI yields
    64x64 heatmaps everywhere. Heatmaps pass through a sigmoid so values
    stay in [0, 1]; the output bias starts low so initial maps are close
    to empty background.
    """

    def __init__(self, num_stacks=2, depth=4, channels=64, num_keypoints=4, input_size=128):
        super().__init__()
        if num_stacks < 1:
            raise InvalidParameterError("need at least one hourglass stack")
        if input_size % (2 ** (depth + 1)) != 0:
            raise InvalidParameterError(
                f"input {input_size} not divisible by 2^{depth + 1}"
            )
        self.input_size = input_size
        self.heatmap_size = input_size // 2
        self.num_stacks = num_stacks
        self.num_keypoints = num_keypoints
        self.stem = nn.Sequential(
            _conv_bn(1, channels // 2, 7, stride=2),
            BasicBlock(channels // 2, channels),
        )
        self.hourglasses = nn.ModuleList(
            Hourglass(depth, channels) for _ in range(num_stacks)
        )
        self.features = nn.ModuleList(
            nn.Sequential(BasicBlock(channels, channels), _conv_bn(channels, channels, 1))
            for _ in range(num_stacks)
        )
        self.outs = nn.ModuleList(
            nn.Conv2d(channels, num_keypoints, 1) for _ in range(num_stacks)
        )
        # start near-background but off the sigmoid's flat tail so peak
        # gradients stay usable
        for conv in self.outs:
            nn.init.constant_(conv.bias, -2.0)
        self.merge_features = nn.ModuleList(
            nn.Conv2d(channels, channels, 1) for _ in range(num_stacks - 1)
        )
        self.merge_preds = nn.ModuleList(
            nn.Conv2d(num_keypoints, channels, 1) for _ in range(num_stacks - 1)
        )

    def forward(self, x: Tensor) -> list[Tensor]:
        if x.dim() != 4 or x.shape[1] != 1 or x.shape[-2:] != (
            self.input_size,
            self.input_size,
        ):
            raise InvalidParameterError(
                f"expected (B, 1, {self.input_size}, {self.input_size}) input, "
                f"got {tuple(x.shape)}"
            )
        x = self.stem(x)
        heatmaps = []
        for i in range(self.num_stacks):
            feature = self.features[i](self.hourglasses[i](x))
            preds = torch.sigmoid(self.outs[i](feature))
            heatmaps.append(preds)
            if i < self.num_stacks - 1:
                x = x + self.merge_features[i](feature) + self.merge_preds[i](preds)
        return heatmaps


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs for the full cascade."""

    input_size: int = 128
    loc_widths: tuple[int, ...] = (16, 32, 64, 128, 256)
    fpn_width: int = 64
    hg_stacks: int = 2
    hg_depth: int = 4
    hg_channels: int = 64
    num_keypoints: int = 4
    use_stn: bool = True

    def build(self) -> "CascadeModel":
        return CascadeModel(self)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["loc_widths"] = tuple(d.get("loc_widths", cls.loc_widths))
        return cls(**d)


@dataclass
class CascadeOutput:
    localization: LocalizationOutput | None
    theta: Tensor | None  # (B, 4), None without an STN
    transformed: Tensor  # (B, 1, S, S) input to the hourglass
    heatmaps: list[Tensor]  # one (B, K, S/2, S/2) per stack


class CascadeModel(nn.Module):
    """Localization + differentiable warp + stacked hourglass."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.stn = (
            LocalizationNet(config.loc_widths, config.fpn_width, config.input_size)
            if config.use_stn
            else None
        )
        self.shn = StackedHourglass(
            config.hg_stacks,
            config.hg_depth,
            config.hg_channels,
            config.num_keypoints,
            config.input_size,
        )

    @property
    def heatmap_size(self) -> int:
        return self.shn.heatmap_size

    def forward(self, roi: Tensor, theta_override: Tensor | None = None) -> CascadeOutput:
        """Run the cascade.

        ``theta_override`` replaces the predicted transform (used when
        training the hourglass on ground-truth-normalized inputs); it also
        serves models built without an STN, which otherwise feed the raw
        ROI straight through.
        """
        localization = None
        theta = theta_override
        if self.stn is not None and theta is None:
            localization = self.stn(roi)
            theta = localization.theta
        if theta is not None:
            size = roi.shape[-1]
            grid = geometry.affine_grid(theta, size, size)
            transformed = geometry.bilinear_sample(roi, grid)
        else:
            transformed = roi
        return CascadeOutput(
            localization=localization,
            theta=theta,
            transformed=transformed,
            heatmaps=self.shn(transformed),
        )

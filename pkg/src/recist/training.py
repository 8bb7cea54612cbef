"""Staged optimization: separate STN and SHN training, then joint tuning.

The schedule follows one rule per stage: validate once per epoch, and
when the validation loss plateaus act on it. For the localization stage
the first plateau switches the loss weighting from mask-heavy warmup to
parameter-heavy refinement; every subsequent plateau divides the learning
rate by 10, and the plateau that causes the second division also stops
the run. The learning-rate sequence is therefore always
{lr0, lr0/10, lr0/100}.

All per-epoch randomness (shuffling, cropping, augmentation) derives from
(seed, stage, epoch), so a run resumed from a checkpoint at an epoch
boundary continues exactly like the uninterrupted one.
"""

from __future__ import annotations

import enum
import hashlib
import io
import json
import math
import zipfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import geometry
from .annotation import normalized_to_pixel
from .data import (
    AugmentLimits,
    LesionSample,
    augment,
    crop_roi,
    draw_affine,
    make_ellipse_mask,
    make_heatmaps,
    roi_normalized_annotation,
)
from .errors import (
    CheckpointError,
    IncompatibleCheckpointError,
    InvalidParameterError,
    NonFiniteLossError,
)
from .losses import (
    LossReport,
    Phase,
    combine_joint,
    combine_shn,
    combine_stn,
    loss_cos,
    loss_hm,
    loss_lrp,
    loss_tpp,
)
from .networks import CascadeModel, ModelConfig, normalize_image

CHECKPOINT_FORMAT_VERSION = 1

_STAGE_SALT = {"stn": 11, "shn": 22, "joint": 33}


class Variant(enum.Enum):
    """Which loss terms are active; mirrors the four ablation rows."""

    SHN_ONLY = "shn_only"  # hourglass alone on the raw ROI, heatmap loss only
    STN_TPP_PLUS_SHN = "stn_tpp_shn"  # parameter-only STN + plain hourglass
    STN_MULTITASK_PLUS_SHN = "stn_multitask_shn"  # multi-task STN + plain hourglass
    FULL = "full"  # multi-task STN + hourglass with the orthogonality loss

    @property
    def use_stn(self) -> bool:
        return self is not Variant.SHN_ONLY

    @property
    def use_lrp(self) -> bool:
        return self in (Variant.STN_MULTITASK_PLUS_SHN, Variant.FULL)

    @property
    def use_cos(self) -> bool:
        return self is Variant.FULL

    @property
    def stages(self) -> tuple[str, ...]:
        return ("shn",) if self is Variant.SHN_ONLY else ("stn", "shn", "joint")

    @property
    def display_name(self) -> str:
        return {
            Variant.SHN_ONLY: "~SHN",
            Variant.STN_TPP_PLUS_SHN: "~STN+~SHN",
            Variant.STN_MULTITASK_PLUS_SHN: "STN+~SHN",
            Variant.FULL: "STN+SHN",
        }[self]


@dataclass(frozen=True)
class TrainConfig:
    """Optimization knobs for one stage run."""

    stage: str  # "stn" | "shn" | "joint"
    lr0: float = 5e-4
    momentum: float = 0.9
    optimizer: str = "sgd"  # "sgd" (the default recipe) or "adam"
    plateau_patience: int = 5
    plateau_eps: float = 1e-3
    max_lr_drops: int = 2
    batch_size: int = 16
    seed: int = 0
    max_epochs: int = 200
    log_every: int = 10
    clip_grad_norm: float | None = 1.0
    augment: bool = True
    augment_limits: AugmentLimits = field(default_factory=AugmentLimits)
    # Hourglass-stage transform jitter: trains the keypoint net on
    # imperfectly normalized views so it tracks the lesion instead of
    # memorizing the canonical endpoint positions (which decode through
    # the predicted transform would then not correct). Magnitudes cover
    # the refined localization network's error distribution.
    canonical_jitter: AugmentLimits = field(
        default_factory=lambda: AugmentLimits(
            translate=0.06, rotate_deg=10.0, scale_low=0.92, scale_high=1.09
        )
    )
    variant: Variant = Variant.FULL

    def __post_init__(self):
        if self.stage not in _STAGE_SALT:
            raise InvalidParameterError(f"unknown stage {self.stage!r}")
        if self.lr0 <= 0:
            raise InvalidParameterError("lr0 must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidParameterError(f"unknown optimizer {self.optimizer!r}")
        if self.stage == "stn" and not self.variant.use_stn:
            raise InvalidParameterError(
                f"variant {self.variant.value} has no localization stage"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["variant"] = Variant(d.get("variant", Variant.FULL.value))
        for key in ("augment_limits", "canonical_jitter"):
            if isinstance(d.get(key), dict):
                d[key] = AugmentLimits(**d[key])
        return cls(**d)


@dataclass
class TrainState:
    """Mutable schedule state carried across epochs (and checkpoints)."""

    step: int = 0
    epoch: int = 0
    current_lr: float = 5e-4
    lr_drops_done: int = 0
    best_val_loss: float = math.inf
    phase: Phase = Phase.STN_WARMUP
    recent_val: list[float] = field(default_factory=list)
    stopped: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["phase"] = self.phase.value
        d["best_val_loss"] = (
            None if math.isinf(self.best_val_loss) else self.best_val_loss
        )
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainState":
        d = dict(d)
        d["phase"] = Phase(d["phase"])
        if d.get("best_val_loss") is None:
            d["best_val_loss"] = math.inf
        return cls(**d)


def detect_plateau(val_history, patience: int = 5, eps: float = 1e-3) -> bool:
    """True when the recent window stopped improving on the prior best.

    The best value of the last ``patience`` epochs must beat the best of
    everything before them by at least ``eps`` (relative) to count as
    still improving.
    """
    if not len(val_history):
        return False
    if len(val_history) < patience + 1:
        return False
    prior_best = min(val_history[:-patience])
    recent_best = min(val_history[-patience:])
    if prior_best <= 0:
        return True
    return (prior_best - recent_best) / prior_best < eps


# ---------------------------------------------------------------------------
# Checkpoint archive: zip of header.json + one .npy per tensor


def _arch_fields(kind: str) -> tuple[str, ...]:
    common = ("input_size", "num_keypoints")
    if kind == "stn":
        return common + ("loc_widths", "fpn_width")
    if kind == "shn":
        return common + ("hg_stacks", "hg_depth", "hg_channels")
    return common + (
        "loc_widths",
        "fpn_width",
        "hg_stacks",
        "hg_depth",
        "hg_channels",
        "use_stn",
    )


def _module_for_kind(model: CascadeModel, kind: str) -> nn.Module:
    if kind == "stn":
        if model.stn is None:
            raise InvalidParameterError("model has no localization network")
        return model.stn
    if kind == "shn":
        return model.shn
    if kind == "joint":
        return model
    raise InvalidParameterError(f"unknown checkpoint kind {kind!r}")


def _optimizer_slots(optimizer, module: nn.Module):
    """Optimizer state keyed '<param name>/<slot>': tensors and scalars."""
    lookup = {id(p): name for name, p in module.named_parameters()}
    tensors: dict[str, torch.Tensor] = {}
    scalars: dict[str, float] = {}
    for p, slots in optimizer.state.items():
        name = lookup.get(id(p))
        if name is None:
            continue
        for slot, value in slots.items():
            if torch.is_tensor(value):
                tensors[f"{name}/{slot}"] = value
            elif isinstance(value, (int, float)):
                scalars[f"{name}/{slot}"] = value
    return tensors, scalars


def save_checkpoint(
    path,
    kind: str,
    model: CascadeModel,
    model_config: ModelConfig,
    train_config: TrainConfig | None,
    state: TrainState,
    optimizer=None,
) -> str:
    """Write a checkpoint archive; returns its version hash.

    The archive is a zip holding ``header.json`` plus one ``params/<name>.npy``
    per tensor of the saved module (and one ``optim/<name>/<slot>.npy`` per
    optimizer state tensor when an optimizer is passed, so a resumed run
    continues bit-exactly).
    """
    module = _module_for_kind(model, kind)
    named = list(module.state_dict().items())
    optim_tensors: dict[str, torch.Tensor] = {}
    optim_scalars: dict[str, float] = {}
    if optimizer is not None:
        optim_tensors, optim_scalars = _optimizer_slots(optimizer, module)

    hasher = hashlib.sha256()
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": kind,
        "model_config": model_config.to_dict(),
        "train_config": train_config.to_dict() if train_config else None,
        "state": state.to_dict(),
        "params": [name for name, _ in named],
        "optim_params": sorted(optim_tensors),
        "optim_scalars": optim_scalars,
    }
    for name, tensor in named:
        hasher.update(name.encode())
        hasher.update(tensor.numpy().tobytes())
    hasher.update(json.dumps(header["model_config"], sort_keys=True).encode())
    header["version"] = hasher.hexdigest()[:16]

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        zf.writestr("header.json", json.dumps(header, indent=1))
        for name, tensor in named:
            buf = io.BytesIO()
            np.save(buf, tensor.numpy())
            zf.writestr(f"params/{name}.npy", buf.getvalue())
        for name in header["optim_params"]:
            buf = io.BytesIO()
            np.save(buf, optim_tensors[name].numpy())
            zf.writestr(f"optim/{name}.npy", buf.getvalue())
    return header["version"]


@dataclass
class Checkpoint:
    """A loaded checkpoint archive."""

    kind: str
    model_config: ModelConfig
    train_config: TrainConfig | None
    state: TrainState
    params: dict[str, np.ndarray]
    optim_tensors: dict[str, np.ndarray]  # '<param>/<slot>' keyed
    optim_scalars: dict[str, float]
    version: str

    def restore_optimizer(self, optimizer, module: nn.Module) -> None:
        """Rebuild per-parameter optimizer slots saved by save_checkpoint."""
        by_name = dict(module.named_parameters())
        slots: dict[str, dict] = {}
        for key, value in self.optim_tensors.items():
            name, slot = key.rsplit("/", 1)
            slots.setdefault(name, {})[slot] = torch.from_numpy(value.copy())
        for key, value in self.optim_scalars.items():
            name, slot = key.rsplit("/", 1)
            slots.setdefault(name, {})[slot] = value
        for name, state in slots.items():
            optimizer.state[by_name[name]] = state

    def check_compatible(self, config: ModelConfig) -> None:
        mine = self.model_config.to_dict()
        theirs = config.to_dict()
        for name in _arch_fields(self.kind):
            if tuple(np.atleast_1d(mine[name])) != tuple(np.atleast_1d(theirs[name])):
                raise IncompatibleCheckpointError(
                    f"{self.kind} checkpoint was built with {name}={mine[name]}, "
                    f"requested {theirs[name]}"
                )

    def load_into(self, model: CascadeModel) -> None:
        self.check_compatible(model.config)
        module = _module_for_kind(model, self.kind)
        tensors = {k: torch.from_numpy(v.copy()) for k, v in self.params.items()}
        missing = set(module.state_dict()) - set(tensors)
        if missing:
            raise IncompatibleCheckpointError(
                f"checkpoint lacks tensors for {sorted(missing)[:3]}..."
            )
        module.load_state_dict(tensors)

    def build_model(self) -> CascadeModel:
        """Reconstruct a fully-specified model from this archive.

        Only archives that cover every parameter of the configured model
        qualify (the joint checkpoint, or an hourglass-only model's shn
        checkpoint); partial stage checkpoints would leave freshly
        initialized weights behind.
        """
        if self.kind == "stn" or (self.kind == "shn" and self.model_config.use_stn):
            raise IncompatibleCheckpointError(
                f"a {self.kind!r} stage checkpoint does not define the full "
                "model; evaluate the joint checkpoint instead"
            )
        model = self.model_config.build()
        self.load_into(model)
        return model


def load_checkpoint(path) -> Checkpoint:
    """Read an archive back; raises CheckpointError naming broken sections."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as exc:
        raise CheckpointError(f"not a checkpoint archive: {exc}")
    with zf:
        try:
            header = json.loads(zf.read("header.json"))
        except KeyError:
            raise CheckpointError("archive section 'header.json' is missing")
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"archive section 'header.json' is corrupt: {exc}")
        if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise IncompatibleCheckpointError(
                f"unsupported checkpoint format {header.get('format_version')!r}"
            )

        def read_array(section: str) -> np.ndarray:
            try:
                return np.load(io.BytesIO(zf.read(section)), allow_pickle=False)
            except Exception as exc:
                raise CheckpointError(f"archive section {section!r} is corrupt: {exc}")

        params = {n: read_array(f"params/{n}.npy") for n in header["params"]}
        optim_tensors = {
            n: read_array(f"optim/{n}.npy") for n in header.get("optim_params", [])
        }
    return Checkpoint(
        kind=header["kind"],
        model_config=ModelConfig.from_dict(header["model_config"]),
        train_config=(
            TrainConfig.from_dict(header["train_config"])
            if header.get("train_config")
            else None
        ),
        state=TrainState.from_dict(header["state"]),
        params=params,
        optim_tensors=optim_tensors,
        optim_scalars=header.get("optim_scalars", {}),
        version=header["version"],
    )


# ---------------------------------------------------------------------------
# Batch assembly


def _epoch_rng(seed: int, stage: str, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, _STAGE_SALT[stage], epoch])


def _heatmap_targets(ann_norms, thetas: np.ndarray | None, hm_size: int) -> torch.Tensor:
    """Ground-truth heatmaps in the frame the hourglass actually sees.

    ``thetas`` holds the sampling transform applied to each ROI (or None
    when the raw ROI feeds the hourglass): endpoints move through its
    inverse before rasterization.
    """
    maps = []
    for i, ann in enumerate(ann_norms):
        if thetas is not None:
            inv = geometry.invert(geometry.AffineParams(*thetas[i]))
            ann = ann.transformed(geometry.compose_affine(inv))
        pts = normalized_to_pixel(ann.ordered_keypoints(), hm_size, hm_size)
        pts = np.clip(pts, 0, hm_size - 1)
        maps.append(make_heatmaps(pts, hm_size, hm_size))
    return torch.from_numpy(np.stack(maps))


@dataclass
class _Batch:
    images: torch.Tensor  # (B, 1, S, S) normalized
    ann_norms: list  # ROI-normalized annotations
    theta_gt: torch.Tensor  # (B, 4)
    theta_used: torch.Tensor  # (B, 4) transform the hourglass stage warps with
    masks: torch.Tensor  # (B, 32, 32) ellipse targets


def _prepare_batch(
    rois,
    mask_size: int,
    jitter_rng: np.random.Generator | None = None,
    jitter: AugmentLimits | None = None,
) -> _Batch:
    images = np.stack([r.image for r in rois])[:, None]
    ann_norms = [roi_normalized_annotation(r) for r in rois]
    masks = np.stack(
        [make_ellipse_mask(a, mask_size, mask_size) for a in ann_norms]
    ).astype(np.float32)
    thetas_gt = [geometry.canonical_theta(a) for a in ann_norms]
    if jitter_rng is not None and jitter is not None:
        used = [
            geometry.compose_params(t, draw_affine(jitter_rng, jitter))
            for t in thetas_gt
        ]
    else:
        used = thetas_gt
    return _Batch(
        images=normalize_image(torch.from_numpy(images.astype(np.float32))),
        ann_norms=ann_norms,
        theta_gt=torch.tensor([t.as_tuple() for t in thetas_gt], dtype=torch.float32),
        theta_used=torch.tensor([t.as_tuple() for t in used], dtype=torch.float32),
        masks=torch.from_numpy(masks),
    )


def _stage_losses(
    model: CascadeModel, batch: _Batch, config: TrainConfig, phase: Phase
) -> tuple[torch.Tensor, LossReport]:
    """Forward pass and the active loss combination for one batch."""
    variant = config.variant
    stage = config.stage
    zero = torch.zeros(())
    l_lrp = l_tpp = l_hm = l_cos = zero

    if stage == "stn":
        out = model.stn(batch.images)
        l_tpp = loss_tpp(out.theta, batch.theta_gt)
        if variant.use_lrp:
            l_lrp = loss_lrp(out.mask_pred, batch.masks)
        total = combine_stn(l_lrp, l_tpp, phase)
    else:
        if stage == "joint":
            out = model(batch.images)
            l_tpp = loss_tpp(out.theta, batch.theta_gt)
            if variant.use_lrp:
                l_lrp = loss_lrp(out.localization.mask_pred, batch.masks)
            thetas = out.theta.detach().numpy().astype(np.float64)
        else:  # hourglass stage: warp with (jittered) ground truth
            thetas = batch.theta_used.numpy().astype(np.float64) if variant.use_stn else None
            override = batch.theta_used if variant.use_stn else None
            out = model(batch.images, theta_override=override)
        gt_maps = _heatmap_targets(batch.ann_norms, thetas, model.heatmap_size)
        l_hm = loss_hm(out.heatmaps, gt_maps)
        if variant.use_cos:
            l_cos = loss_cos(out.heatmaps[-1])
        if stage == "joint":
            total = combine_joint(l_lrp, l_tpp, l_hm, l_cos)
        else:
            total = combine_shn(l_hm, l_cos)

    report = LossReport(
        step=0,
        phase=phase,
        l_lrp=float(l_lrp.detach() if torch.is_tensor(l_lrp) else l_lrp),
        l_tpp=float(l_tpp.detach() if torch.is_tensor(l_tpp) else l_tpp),
        l_hm=float(l_hm.detach() if torch.is_tensor(l_hm) else l_hm),
        l_cos=float(l_cos.detach() if torch.is_tensor(l_cos) else l_cos),
        total=float(total.detach() if torch.is_tensor(total) else total),
    )
    return total, report


def _trained_module(model: CascadeModel, stage: str) -> nn.Module:
    return _module_for_kind(model, {"stn": "stn", "shn": "shn", "joint": "joint"}[stage])


@dataclass
class TrainResult:
    state: TrainState
    model: CascadeModel
    best_path: Path
    last_path: Path
    history_path: Path
    lr_sequence: list[float]


def train_stage(
    config: TrainConfig,
    model_config: ModelConfig,
    train_samples: list[LesionSample],
    val_samples: list[LesionSample],
    out_dir,
    init_from: dict[str, Path] | None = None,
    resume: Path | None = None,
) -> TrainResult:
    """Run one stage to its stopping rule; emits checkpoints and history.

    ``train_samples``/``val_samples`` are original-frame samples; ROI
    cropping and augmentation happen per epoch from seeded generators.
    For the joint stage both sub-stage checkpoints must be supplied via
    ``init_from={"stn": ..., "shn": ...}``.
    """
    if not train_samples or not val_samples:
        raise InvalidParameterError("training and validation sets must be non-empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = config.stage
    variant = config.variant

    if model_config.use_stn != variant.use_stn:
        model_config = replace(model_config, use_stn=variant.use_stn)

    torch.manual_seed(config.seed)
    model = model_config.build()
    optimizer: torch.optim.SGD | None = None
    state = TrainState(
        current_lr=config.lr0,
        phase=Phase.STN_WARMUP if stage == "stn" else (
            Phase.SHN_ONLY if stage == "shn" else Phase.JOINT
        ),
    )
    lr_sequence = [config.lr0]

    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.kind != stage:
            raise IncompatibleCheckpointError(
                f"cannot resume stage {stage!r} from a {ckpt.kind!r} checkpoint"
            )
        ckpt.load_into(model)
        state = ckpt.state
        lr_sequence = [config.lr0 / 10**k for k in range(state.lr_drops_done + 1)]
    elif stage == "joint":
        if not init_from or "stn" not in init_from or "shn" not in init_from:
            raise InvalidParameterError(
                "joint training requires both the stn and shn checkpoints"
            )
        load_checkpoint(init_from["stn"]).load_into(model)
        load_checkpoint(init_from["shn"]).load_into(model)
    elif init_from:
        for sub in init_from.values():
            load_checkpoint(sub).load_into(model)

    trained = _trained_module(model, stage)
    if config.optimizer == "adam":
        optimizer = torch.optim.Adam(trained.parameters(), lr=state.current_lr)
    else:
        optimizer = torch.optim.SGD(
            trained.parameters(), lr=state.current_lr, momentum=config.momentum
        )
    if resume is not None and ckpt.optim_tensors:
        ckpt.restore_optimizer(optimizer, trained)

    # fixed validation crops, derived from the seed only
    val_rois = [
        s if s.crop_record is not None
        else crop_roi(s, np.random.default_rng([config.seed, 77, i]))
        for i, s in enumerate(val_samples)
    ]

    history_path = out_dir / "history.jsonl"
    best_path = out_dir / "best.ckpt"
    last_path = out_dir / "last.ckpt"
    mask_size = model_config.input_size // 4

    def run_validation() -> float:
        model.eval()
        total = 0.0
        with torch.no_grad():
            for start in range(0, len(val_rois), config.batch_size):
                chunk = val_rois[start : start + config.batch_size]
                batch = _prepare_batch(chunk, mask_size)
                loss, _ = _stage_losses(model, batch, config, state.phase)
                total += float(loss) * len(chunk)
        model.train()
        return total / len(val_rois)

    def save(path, with_optim=True):
        return save_checkpoint(
            path,
            stage,
            model,
            model_config,
            config,
            state,
            optimizer if with_optim else None,
        )

    history = open(history_path, "a", encoding="utf-8")

    def record(obj: dict):
        history.write(json.dumps(obj) + "\n")
        history.flush()

    model.train()
    try:
        while state.epoch < config.max_epochs and not state.stopped:
            rng = _epoch_rng(config.seed, stage, state.epoch)
            order = rng.permutation(len(train_samples))
            for start in range(0, len(order), config.batch_size):
                idx = order[start : start + config.batch_size]
                rois = []
                for i in idx:
                    sample = train_samples[i]
                    # pre-cropped (ROI-frame) samples train on their fixed view
                    roi = (
                        sample
                        if sample.crop_record is not None
                        else crop_roi(sample, rng)
                    )
                    if config.augment:
                        roi = augment(roi, rng, config.augment_limits)
                    rois.append(roi)
                jitter = (
                    config.canonical_jitter
                    if stage == "shn" and variant.use_stn
                    else None
                )
                batch = _prepare_batch(rois, mask_size, rng, jitter)
                total, report = _stage_losses(model, batch, config, state.phase)
                if not math.isfinite(report.total):
                    save(out_dir / "diagnostic.ckpt")
                    raise NonFiniteLossError(
                        f"non-finite loss at step {state.step}; diagnostic "
                        f"checkpoint written to {out_dir / 'diagnostic.ckpt'}"
                    )
                optimizer.zero_grad()
                total.backward()
                if config.clip_grad_norm is not None:
                    nn.utils.clip_grad_norm_(
                        trained.parameters(), config.clip_grad_norm
                    )
                optimizer.step()
                state.step += 1
                if state.step % config.log_every == 0:
                    report.step = state.step
                    record({"type": "loss", **json.loads(report.to_json_line())})

            state.epoch += 1
            val_loss = run_validation()
            state.recent_val.append(val_loss)
            record(
                {
                    "type": "epoch",
                    "epoch": state.epoch,
                    "val_loss": val_loss,
                    "lr": state.current_lr,
                    "phase": state.phase.value,
                }
            )
            if val_loss < state.best_val_loss:
                state.best_val_loss = val_loss
                save(best_path, with_optim=False)

            if detect_plateau(
                state.recent_val, config.plateau_patience, config.plateau_eps
            ):
                if stage == "stn" and state.phase == Phase.STN_WARMUP:
                    # loss reweighting changes the validation scale: restart
                    # the plateau window and the best-value tracking
                    state.phase = Phase.STN_REFINE
                    state.recent_val = []
                    state.best_val_loss = math.inf
                    record(
                        {
                            "type": "event",
                            "event": "phase_switch",
                            "epoch": state.epoch,
                            "phase": state.phase.value,
                        }
                    )
                else:
                    state.lr_drops_done += 1
                    state.current_lr = config.lr0 / 10**state.lr_drops_done
                    lr_sequence.append(state.current_lr)
                    for group in optimizer.param_groups:
                        group["lr"] = state.current_lr
                    state.recent_val = []
                    record(
                        {
                            "type": "event",
                            "event": "lr_drop",
                            "epoch": state.epoch,
                            "new_lr": state.current_lr,
                        }
                    )
                    if state.lr_drops_done >= config.max_lr_drops:
                        state.stopped = True
                        record(
                            {"type": "event", "event": "stop", "epoch": state.epoch}
                        )
            save(last_path)
    finally:
        history.close()

    model.eval()
    if not best_path.exists():
        save(best_path, with_optim=False)
    return TrainResult(
        state=state,
        model=model,
        best_path=best_path,
        last_path=last_path,
        history_path=history_path,
        lr_sequence=lr_sequence,
    )


def run_variant(
    variant: Variant,
    model_config: ModelConfig,
    train_samples,
    val_samples,
    out_dir,
    seed: int = 0,
    overrides: dict | None = None,
) -> dict[str, TrainResult]:
    """Train every stage of a variant in order; returns results per stage.

    ``overrides`` (TrainConfig fields, optionally per-stage under the
    stage name) tune epoch budgets and the like without touching the
    schedule mechanics.
    """
    out_dir = Path(out_dir)
    results: dict[str, TrainResult] = {}
    paths: dict[str, Path] = {}
    for stage in variant.stages:
        kwargs = dict(stage=stage, seed=seed, variant=variant)
        if overrides:
            flat = {k: v for k, v in overrides.items() if not isinstance(v, dict)}
            kwargs.update(flat)
            kwargs.update(overrides.get(stage, {}))
        config = TrainConfig(**kwargs)
        init = {k: v for k, v in paths.items()} if stage == "joint" else None
        results[stage] = train_stage(
            config,
            model_config,
            train_samples,
            val_samples,
            out_dir / stage,
            init_from=init,
        )
        paths[stage] = results[stage].best_path
    return results


def final_checkpoint_path(variant: Variant, out_dir) -> Path:
    """Where a variant's evaluation checkpoint lands after training."""
    stage = "shn" if variant is Variant.SHN_ONLY else "joint"
    return Path(out_dir) / stage / "best.ckpt"

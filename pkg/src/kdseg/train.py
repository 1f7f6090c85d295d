"""Student training: RMSProp over the compound loss with optional consistency.

The optimizer is written out explicitly (v <- rho*v + (1-rho)*g^2;
w <- w - lr*g/(sqrt(v) + eps)) rather than delegated, so the update rule under
test is the one in this file. Batches are drawn from a seeded shuffle queue:
with the default 4 steps/epoch this reproduces the tiny-epoch protocol, and
steps_per_epoch=None switches to a full pass of ceil(N/B) steps.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .augment import AXES, SplitFlipTransform, apply, sample_transform
from .data import DatasetManifest, load_label_as_binary, load_patch
from .errors import ConfigError, TrainingError
from .losses import LossConfig, compound_loss, consistency_loss
from .metrics import ConfusionCounts, confusion, dice
from .model import StudentModel, save_checkpoint


@dataclass
class OptimizerConfig:
    learning_rate: float = 0.001
    rho: float = 0.9
    epsilon: float = 1e-7
    lr_decay: float = 1.0  # per-epoch multiplicative factor; 1.0 = no decay

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 < self.rho < 1:
            raise ConfigError(f"rho must be in (0, 1), got {self.rho}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError(f"lr_decay must be in (0, 1], got {self.lr_decay}")


@dataclass
class AugmentConfig:
    transforms: tuple[str, ...] = AXES
    p_identity: float = 0.5

    def __post_init__(self):
        self.transforms = tuple(self.transforms)
        for axis in self.transforms:
            SplitFlipTransform(axis)  # validates the name
        if not 0 <= self.p_identity <= 1:
            raise ConfigError(f"p_identity must be in [0, 1], got {self.p_identity}")


@dataclass
class TrainConfig:
    epochs: int = 25
    steps_per_epoch: int | None = 4  # None = full pass, ceil(N / batch_size)
    batch_size: int = 8
    seed: int = 0
    validation_interval: int = 1
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    augment_enabled: bool = True
    checkpoint_dir: str | Path | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ConfigError(f"steps_per_epoch must be >= 1, got {self.steps_per_epoch}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.validation_interval < 1:
            raise ConfigError(
                f"validation_interval must be >= 1, got {self.validation_interval}"
            )


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float | None] = field(default_factory=list)
    val_dice: list[float | None] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_dice: float | None = None
    optimizer_steps: int = 0
    epoch_seconds: list[float] = field(default_factory=list, compare=False)
    best_checkpoint: str | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        import json

        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def rmsprop_step(
    params: dict[str, torch.Tensor],
    grads: dict[str, torch.Tensor],
    state: dict[str, torch.Tensor],
    cfg: OptimizerConfig,
    learning_rate: float | None = None,
) -> tuple[dict[str, torch.Tensor], dict[str, torch.Tensor]]:
    """One RMSProp update, in place over every named parameter.

    state maps parameter name -> running average v of squared gradients, and
    is initialized to zeros on first touch. Returns (params, state).
    """
    lr = cfg.learning_rate if learning_rate is None else learning_rate
    with torch.no_grad():
        for name, param in params.items():
            grad = grads.get(name)
            if grad is None:
                continue
            if not torch.isfinite(grad).all():
                raise TrainingError(f"non-finite gradient in parameter {name!r}")
            v = state.get(name)
            if v is None:
                v = torch.zeros_like(param)
            v.mul_(cfg.rho).addcmul_(grad, grad, value=1 - cfg.rho)
            state[name] = v
            param.sub_(lr * grad / (torch.sqrt(v) + cfg.epsilon))
    return params, state


class _ShuffleQueue:
    """Endless stream of indices: seeded permutation, reshuffled on exhaustion."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng
        self.order: list[int] = []

    def draw(self, count: int) -> list[int]:
        out = []
        while len(out) < count:
            if not self.order:
                self.order = list(self.rng.permutation(self.n))
            out.append(int(self.order.pop(0)))
        return out


def _load_split(manifest: DatasetManifest, split: str) -> tuple[np.ndarray, np.ndarray]:
    """Stack a labeled split into (images N x H x W x C, masks N x H x W)."""
    records = manifest.split(split)
    images, masks = [], []
    for record in records:
        if record.label_kind == "none":
            raise ConfigError(f"record {record.image_id!r} in split {split!r} has no label")
        images.append(load_patch(manifest.image_path(record)).pixels)
        masks.append(load_label_as_binary(manifest.label_path(record)).pixels)
    return np.stack(images), np.stack(masks).astype(np.float32)


def _validate(model: StudentModel, images, masks, loss_cfg, batch_size) -> tuple[float, float]:
    """(mean compound loss, Dice at 0.5) over a split, dropout off."""
    model.set_training(False)
    losses = []
    tp = fp = fn = tn = 0
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            xb = torch.from_numpy(
                images[start : start + batch_size].transpose(0, 3, 1, 2)
            ).float()
            yb = torch.from_numpy(masks[start : start + batch_size][:, None])
            pred = model.forward_tensor(xb)
            losses.append(float(compound_loss(yb, pred, loss_cfg)))
            hard = (pred[:, 0].numpy() >= 0.5).astype(np.uint8)
            for pred_mask, truth_mask in zip(hard, masks[start : start + batch_size]):
                counts = confusion(pred_mask, truth_mask.astype(np.uint8))
                tp += counts.tp
                fp += counts.fp
                fn += counts.fn
                tn += counts.tn
    val_loss = float(np.mean(losses))
    val_dice = dice(ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn))
    return val_loss, val_dice


def fit(model: StudentModel, manifest: DatasetManifest, cfg: TrainConfig) -> TrainReport:
    """Train the student on the manifest's train split, monitor on val.

    Only train and val records are ever read. The best-validation-Dice
    checkpoint is written to cfg.checkpoint_dir/best.pt; on a non-finite loss
    the last good parameters are saved to aborted.pt and TrainingError raised.
    """
    if not manifest.split("train"):
        raise ConfigError("train split is empty")
    train_images, train_masks = _load_split(manifest, "train")
    has_val = len(manifest.split("val")) > 0
    if has_val:
        val_images, val_masks = _load_split(manifest, "val")

    ckpt_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    queue = _ShuffleQueue(len(train_images), rng)
    params = dict(model.net.named_parameters())
    opt_state: dict[str, torch.Tensor] = {}
    report = TrainReport()
    n_train = len(train_images)
    steps = (
        cfg.steps_per_epoch
        if cfg.steps_per_epoch is not None
        else math.ceil(n_train / cfg.batch_size)
    )

    def _abort(reason: str) -> None:
        if ckpt_dir is not None:
            save_checkpoint(model, ckpt_dir / "aborted.pt", epoch=len(report.train_loss))
        raise TrainingError(reason)

    for epoch in range(cfg.epochs):
        started = time.monotonic()
        lr = cfg.optimizer.learning_rate * cfg.optimizer.lr_decay**epoch
        model.set_training(True)
        epoch_losses = []
        for _ in range(steps):
            idx = queue.draw(min(cfg.batch_size, n_train))
            xb_np = train_images[idx]
            yb_np = train_masks[idx]
            if cfg.augment_enabled and cfg.augment.transforms:
                t = sample_transform(
                    rng, p_identity=cfg.augment.p_identity, enabled=cfg.augment.transforms
                )
                if t is not None:
                    xb_np = apply(t, xb_np, spatial_axes=(1, 2))
                    yb_np = apply(t, yb_np, spatial_axes=(1, 2))
            xb = torch.from_numpy(xb_np.transpose(0, 3, 1, 2).copy()).float()
            yb = torch.from_numpy(yb_np[:, None].copy())
            pred = model.forward_tensor(xb)
            loss = compound_loss(yb, pred, cfg.loss)
            if cfg.loss.lambda_consistency > 0 and cfg.augment.transforms:
                axis = cfg.augment.transforms[int(rng.integers(len(cfg.augment.transforms)))]
                t_cons = SplitFlipTransform(axis)
                pred_of_t = model.forward_tensor(apply(t_cons, xb, spatial_axes=(2, 3)))
                t_of_pred = apply(t_cons, pred, spatial_axes=(2, 3))
                loss = loss + cfg.loss.lambda_consistency * consistency_loss(
                    pred_of_t, t_of_pred
                )
            if not torch.isfinite(loss):
                _abort(
                    f"non-finite loss at epoch {epoch}, step {report.optimizer_steps}"
                )
            for param in params.values():
                if param.grad is not None:
                    param.grad = None
            loss.backward()
            grads = {name: p.grad for name, p in params.items() if p.grad is not None}
            try:
                rmsprop_step(params, grads, opt_state, cfg.optimizer, learning_rate=lr)
            except TrainingError as exc:
                _abort(str(exc))
            report.optimizer_steps += 1
            epoch_losses.append(float(loss.detach()))

        report.train_loss.append(float(np.mean(epoch_losses)))
        run_val = has_val and (
            (epoch + 1) % cfg.validation_interval == 0 or epoch == cfg.epochs - 1
        )
        if run_val:
            val_loss, val_dice = _validate(
                model, val_images, val_masks, cfg.loss, cfg.batch_size
            )
            report.val_loss.append(val_loss)
            report.val_dice.append(val_dice)
            if report.best_val_dice is None or val_dice > report.best_val_dice:
                report.best_val_dice = val_dice
                report.best_epoch = epoch
                if ckpt_dir is not None:
                    path = ckpt_dir / "best.pt"
                    save_checkpoint(model, path, epoch=epoch)
                    report.best_checkpoint = str(path)
        else:
            report.val_loss.append(None)
            report.val_dice.append(None)
        report.epoch_seconds.append(time.monotonic() - started)

    model.set_training(False)
    if ckpt_dir is not None and report.best_checkpoint is None:
        # no validation ever ran; keep the final parameters as the checkpoint
        path = ckpt_dir / "best.pt"
        save_checkpoint(model, path, epoch=cfg.epochs - 1)
        report.best_checkpoint = str(path)
    return report

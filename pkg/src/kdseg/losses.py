"""Bias-correcting compound loss: weighted BCE + soft Tversky, plus the
consistency penalty used with the split-flip transforms.

The Tversky term uses soft (probabilistic) TP/FP/FN counts so the loss is
differentiable; with hard predictions and vanishing smoothing it reduces to
1 - TP/(TP + alpha*FP + beta*FN). beta > alpha penalizes false negatives
harder, which is what lets a student recover nuclei its teacher missed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError, DimensionError


@dataclass
class LossConfig:
    w_bce: float = 0.4
    w_tversky: float = 0.6
    alpha: float = 0.2
    beta: float = 0.8
    smooth_eps: float = 1e-6
    lambda_consistency: float = 0.1
    prob_clip_eps: float = 1e-7

    def __post_init__(self):
        if self.w_bce < 0 or self.w_tversky < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be non-negative")
        if self.smooth_eps <= 0:
            raise ConfigError("smooth_eps must be positive")
        if not 0.0 < self.prob_clip_eps < 0.5:
            raise ConfigError("prob_clip_eps must be in (0, 0.5)")


def _as_tensor(arr) -> torch.Tensor:
    if hasattr(arr, "pixels"):
        arr = arr.pixels
    if isinstance(arr, torch.Tensor):
        return arr
    return torch.as_tensor(np.asarray(arr))


def _pair(target, pred) -> tuple[torch.Tensor, torch.Tensor]:
    """Coerce (target, pred) to torch tensors of matching shape and dtype."""
    t, p = _as_tensor(target), _as_tensor(pred)
    if t.shape != p.shape:
        raise DimensionError(f"target shape {tuple(t.shape)} != pred shape {tuple(p.shape)}")
    if not p.dtype.is_floating_point:
        p = p.to(torch.float32)
    return t.to(p.dtype), p


def bce_loss(target, pred, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """Mean binary cross-entropy with the prediction clipped for log stability."""
    t, p = _pair(target, pred)
    p = p.clamp(cfg.prob_clip_eps, 1.0 - cfg.prob_clip_eps)
    return -(t * torch.log(p) + (1.0 - t) * torch.log(1.0 - p)).mean()


def soft_counts(target, pred) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Soft TP/FP/FN sums over all pixels."""
    t, p = _pair(target, pred)
    tp = (t * p).sum()
    fp = ((1.0 - t) * p).sum()
    fn = (t * (1.0 - p)).sum()
    return tp, fp, fn


def tversky_index(tp, fp, fn, alpha: float, beta: float, smooth_eps: float = 1e-6):
    """(TP + eps) / (TP + alpha*FP + beta*FN + eps); works on scalars or tensors."""
    return (tp + smooth_eps) / (tp + alpha * fp + beta * fn + smooth_eps)


def tversky_loss(target, pred, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """One minus the soft Tversky index."""
    tp, fp, fn = soft_counts(target, pred)
    return 1.0 - tversky_index(tp, fp, fn, cfg.alpha, cfg.beta, cfg.smooth_eps)


def compound_loss(target, pred, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """w_bce * BCE + w_tversky * Tversky, defaults (0.4, 0.6)."""
    return cfg.w_bce * bce_loss(target, pred, cfg) + cfg.w_tversky * tversky_loss(target, pred, cfg)


def consistency_loss(pred_of_transformed, transformed_pred) -> torch.Tensor:
    """Mean squared disagreement between the two routes around a transform.

    Zero iff the model is exactly equivariant on this input: predicting the
    transformed patch gives the transformed prediction.
    """
    a, b = _pair(pred_of_transformed, transformed_pred)
    return ((a - b) ** 2).mean()

"""Differentiable segmentation losses over per-pixel class probabilities.

All functions take channels-last probability tensors [..., 2] (class 0 =
non-landslide, class 1 = landslide) and a binary target of matching
spatial shape. Inputs may be numpy arrays or torch tensors; the result
is a scalar torch tensor so gradients flow when the inputs require them.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ShapeMismatch

PROB_FLOOR = 1e-7


@dataclass
class LossConfig:
    kind: str = "combined"
    focal_gamma: float = 2.0
    focal_alpha: float | None = 0.25
    iou_epsilon: float = 1e-6
    combined_weights: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("ce", "focal", "iou", "combined"):
            raise ValueError(f"unknown loss kind '{self.kind}'")
        if self.focal_gamma < 0:
            raise ValueError("focal_gamma must be >= 0")
        if self.iou_epsilon <= 0:
            raise ValueError("iou_epsilon must be > 0")
        self.combined_weights = tuple(float(w) for w in self.combined_weights)
        if len(self.combined_weights) != 2 or any(w < 0 for w in self.combined_weights):
            raise ValueError("combined_weights must be two non-negative floats")


def _as_prob_target(probs, target) -> tuple[torch.Tensor, torch.Tensor]:
    probs = torch.as_tensor(probs)
    target = torch.as_tensor(target)
    if probs.shape[-1] != 2:
        raise ShapeMismatch(f"probabilities must have a trailing class axis of 2, got {tuple(probs.shape)}")
    if probs.shape[:-1] != target.shape:
        raise ShapeMismatch(
            f"probability shape {tuple(probs.shape[:-1])} does not match target shape {tuple(target.shape)}"
        )
    return probs, target


def _p_true(probs: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    positive = target.to(probs.dtype)
    return probs[..., 1] * positive + probs[..., 0] * (1.0 - positive)


def cross_entropy(probs, target) -> torch.Tensor:
    """Mean of -log p(true class), with probabilities floored at 1e-7."""
    probs, target = _as_prob_target(probs, target)
    p_t = _p_true(probs, target).clamp(min=PROB_FLOOR)
    return (-torch.log(p_t)).mean()


def focal_loss(probs, target, gamma: float = 2.0, alpha: float | None = 0.25) -> torch.Tensor:
    """Mean of -alpha_t * (1 - p_t)^gamma * log p_t.

    alpha_t is alpha for positives and 1 - alpha for negatives;
    alpha=None weights both classes by 1 (the gamma=0, alpha=None case
    reduces exactly to cross_entropy).
    """
    probs, target = _as_prob_target(probs, target)
    p_t = _p_true(probs, target).clamp(min=PROB_FLOOR)
    modulation = (1.0 - p_t) ** gamma
    if alpha is None:
        alpha_t = torch.ones_like(p_t)
    else:
        positive = target.to(probs.dtype)
        alpha_t = alpha * positive + (1.0 - alpha) * (1.0 - positive)
    return (-alpha_t * modulation * torch.log(p_t)).mean()


def iou_loss(probs, target, epsilon: float = 1e-6) -> torch.Tensor:
    """Soft IoU loss on the landslide channel, summed over all pixels."""
    probs, target = _as_prob_target(probs, target)
    p = probs[..., 1]
    y = target.to(probs.dtype)
    intersection = (p * y).sum()
    union = p.sum() + y.sum() - intersection
    return 1.0 - (intersection + epsilon) / (union + epsilon)


def combined_loss(probs, target, cfg: LossConfig) -> torch.Tensor:
    """Weighted sum of focal and soft-IoU terms (default unit weights)."""
    w_focal, w_iou = cfg.combined_weights
    total = torch.zeros((), dtype=torch.as_tensor(probs).dtype)
    if w_focal:
        total = total + w_focal * focal_loss(probs, target, cfg.focal_gamma, cfg.focal_alpha)
    if w_iou:
        total = total + w_iou * iou_loss(probs, target, cfg.iou_epsilon)
    return total


def compute_loss(probs, target, cfg: LossConfig) -> torch.Tensor:
    """Dispatch on cfg.kind (ce / focal / iou / combined)."""
    if cfg.kind == "ce":
        return cross_entropy(probs, target)
    if cfg.kind == "focal":
        return focal_loss(probs, target, cfg.focal_gamma, cfg.focal_alpha)
    if cfg.kind == "iou":
        return iou_loss(probs, target, cfg.iou_epsilon)
    return combined_loss(probs, target, cfg)


def resample_target(target: torch.Tensor, size: int) -> torch.Tensor:
    """Nearest-neighbour resampling of a binary target to size x size."""
    target = torch.as_tensor(target)
    if target.shape[-1] == size and target.shape[-2] == size:
        return target
    squeeze = target.ndim == 2
    batched = target[None] if squeeze else target
    resized = F.interpolate(batched[:, None].float(), size=(size, size), mode="nearest")[:, 0]
    resized = resized.round().to(target.dtype)
    return resized[0] if squeeze else resized


def multi_head_loss(heads, target, cfg: LossConfig) -> torch.Tensor:
    """Mean per-head loss, each head compared to the resampled target."""
    target = torch.as_tensor(target)
    terms = []
    for probs in heads.as_dict().values():
        size = probs.shape[-2]
        terms.append(compute_loss(probs, resample_target(target, size), cfg))
    return torch.stack(terms).mean()

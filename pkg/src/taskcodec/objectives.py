"""Loss terms and their weighted combination.

The training objective is distortion + alpha * task + beta * rate; the
segmentation task loss is weighted cross-entropy + gamma * Dice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ShapeMismatchError, TrainingAbortError

DICE_EPS = 1e-6


@dataclass(frozen=True)
class LossWeights:
    """alpha scales the task loss, beta the rate loss, gamma the Dice term."""

    alpha: float = 1.0
    beta: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class LossBreakdown:
    """Per-term losses; ``total`` keeps the autograd graph for backward."""

    distortion: torch.Tensor
    task: torch.Tensor
    rate: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> tuple[float, float, float, float]:
        return (float(self.distortion.detach()), float(self.task.detach()),
                float(self.rate.detach()), float(self.total.detach()))


def distortion_loss(reconstruction: torch.Tensor, original: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all elements."""
    if reconstruction.shape != original.shape:
        raise ShapeMismatchError(
            f"reconstruction {tuple(reconstruction.shape)} vs original {tuple(original.shape)}"
        )
    return ((reconstruction - original) ** 2).mean()


def classification_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Softmax cross-entropy averaged over the batch."""
    k = logits.shape[-1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range [0, {k})")
    return F.cross_entropy(logits, labels)


def dice_loss(class_probs: torch.Tensor, mask: torch.Tensor,
              eps: float = DICE_EPS) -> torch.Tensor:
    """One minus the mean Dice coefficient over classes.

    ``class_probs`` must be softmax-normalized per pixel, (B, K, H, W);
    ``mask`` holds class indices, (B, H, W).  Classes with no prediction
    mass and no ground-truth pixels are skipped rather than counted as
    perfect.
    """
    k = class_probs.shape[1]
    if mask.numel() and (mask.min() < 0 or mask.max() >= k):
        raise ValueError(f"mask value out of range [0, {k})")
    one_hot = F.one_hot(mask, k).permute(0, 3, 1, 2).to(class_probs.dtype)
    dims = (0, 2, 3)
    intersection = (class_probs * one_hot).sum(dims)
    pred_mass = class_probs.sum(dims)
    truth_mass = one_hot.sum(dims)
    denom = pred_mass + truth_mass
    dice = (2.0 * intersection + eps) / (denom + eps)
    present = denom > 0
    if not bool(present.any()):
        return torch.zeros((), dtype=class_probs.dtype, device=class_probs.device)
    return 1.0 - dice[present].mean()


def segmentation_loss(class_scores: torch.Tensor, mask: torch.Tensor,
                      weights: LossWeights,
                      class_weights: torch.Tensor | None = None) -> torch.Tensor:
    """Weighted cross-entropy plus gamma-scaled Dice loss on raw scores."""
    xe = F.cross_entropy(class_scores, mask, weight=class_weights)
    if weights.gamma == 0:
        return xe
    probs = F.softmax(class_scores, dim=1)
    return xe + weights.gamma * dice_loss(probs, mask)


def inverse_frequency_weights(class_counts: torch.Tensor) -> torch.Tensor:
    """Inverse class-frequency weights, normalized to mean 1.

    Counts come from the training split; zero-count classes get weight 0
    (they contribute no pixels, so their weight is never used).
    """
    counts = class_counts.to(torch.float64)
    inv = torch.where(counts > 0, 1.0 / counts.clamp(min=1.0), torch.zeros_like(counts))
    if inv.sum() == 0:
        raise ValueError("no class has any training pixels")
    inv = inv * (inv > 0).sum() / inv.sum()
    return inv.to(torch.float32)


def total_loss(l_distortion, l_task, l_rate, weights: LossWeights) -> LossBreakdown:
    """Combine the three terms; aborts with the offending term on non-finite input."""
    l_d = torch.as_tensor(l_distortion)
    l_t = torch.as_tensor(l_task)
    l_r = torch.as_tensor(l_rate)
    for name, term in (("distortion", l_d), ("task", l_t), ("rate", l_r)):
        if not torch.isfinite(term).all():
            raise TrainingAbortError(term=name, epoch=-1)
    total = l_d + weights.alpha * l_t + weights.beta * l_r
    return LossBreakdown(distortion=l_d, task=l_t, rate=l_r, total=total)

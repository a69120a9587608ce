"""Desk-scale downstream networks and their evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn


class SmallClassifier(nn.Module):
    """Four conv blocks, global average pooling and a linear layer.

    Stand-in for a large classification backbone at desk scale (~0.5M
    parameters).  Pooling uses ceil mode so inputs smaller than 32x32
    still reduce cleanly.
    """

    def __init__(self, num_classes: int, image_channels: int = 3,
                 widths: tuple[int, int, int, int] = (32, 64, 128, 256)):
        super().__init__()
        if num_classes < 2:
            raise ValueError("need at least 2 classes")
        self.num_classes = num_classes
        layers: list[nn.Module] = []
        prev = image_channels
        for i, width in enumerate(widths):
            layers += [
                nn.Conv2d(prev, width, 3, padding=1),
                nn.BatchNorm2d(width),
                nn.ReLU(),
            ]
            if i < len(widths) - 1:
                layers.append(nn.MaxPool2d(2, ceil_mode=True))
            prev = width
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(prev, num_classes)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        x = self.features(image)
        x = self.pool(x).flatten(1)
        return self.fc(x)


class SmallSegmenter(nn.Module):
    """Small encoder-decoder FCN emitting per-pixel class scores (~1M params).

    GroupNorm instead of BatchNorm: segmentation batches are tiny (3),
    and eval must be deterministic regardless of batch composition.
    """

    def __init__(self, num_classes: int, image_channels: int = 3, width: int = 48):
        super().__init__()
        if num_classes < 2:
            raise ValueError("need at least 2 classes")
        self.num_classes = num_classes
        w1, w2, w3 = width, width * 2, width * 4

        def block(cin, cout):
            return [nn.Conv2d(cin, cout, 3, padding=1),
                    nn.GroupNorm(8, cout), nn.ReLU()]

        self.enc1 = nn.Sequential(*block(image_channels, w1), *block(w1, w1))
        self.enc2 = nn.Sequential(nn.MaxPool2d(2), *block(w1, w2), *block(w2, w2))
        self.mid = nn.Sequential(nn.MaxPool2d(2), *block(w2, w3), *block(w3, w3))
        self.up1 = nn.Sequential(
            nn.ConvTranspose2d(w3, w2, 4, stride=2, padding=1),
            nn.GroupNorm(8, w2), nn.ReLU(), *block(w2, w2),
        )
        self.up2 = nn.Sequential(
            nn.ConvTranspose2d(w2, w1, 4, stride=2, padding=1),
            nn.GroupNorm(8, w1), nn.ReLU(),
        )
        self.out = nn.Conv2d(w1, num_classes, 1)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        x = self.enc1(image)
        x = self.enc2(x)
        x = self.mid(x)
        x = self.up1(x)
        x = self.up2(x)
        return self.out(x)


def accuracy(predictions: torch.Tensor, ground_truth: torch.Tensor) -> float:
    """Percent of matching entries; pixel-wise when given masks."""
    if predictions.shape != ground_truth.shape:
        raise ValueError(
            f"shape mismatch {tuple(predictions.shape)} vs {tuple(ground_truth.shape)}"
        )
    if predictions.numel() == 0:
        raise ValueError("accuracy of an empty prediction set is undefined")
    correct = (predictions == ground_truth).sum().item()
    return 100.0 * correct / predictions.numel()


def mean_iou(predicted_masks: torch.Tensor, ground_truth_masks: torch.Tensor,
             num_classes: int) -> float:
    """Mean over classes of percent intersection-over-union.

    Classes absent from both masks (empty union) are skipped, not
    counted as zero.
    """
    if predicted_masks.shape != ground_truth_masks.shape:
        raise ValueError("mask shapes differ")
    ious = []
    for c in range(num_classes):
        pred_c = predicted_masks == c
        true_c = ground_truth_masks == c
        union = (pred_c | true_c).sum().item()
        if union == 0:
            continue
        inter = (pred_c & true_c).sum().item()
        ious.append(inter / union)
    if not ious:
        return 0.0
    return 100.0 * sum(ious) / len(ious)


@dataclass
class MetricsRecord:
    """One evaluated operating point of a trained run."""

    task: str
    regime: str
    seed: int
    beta: float
    accuracy: float
    bpp: float
    mean_iou: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 100.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 100]")
        if self.mean_iou is not None and not 0.0 <= self.mean_iou <= 100.0:
            raise ValueError(f"mean_iou {self.mean_iou} outside [0, 100]")

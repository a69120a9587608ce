"""Dataset ingestion with seeded, reproducible train/validation splits.

Classification layout: one directory per class, images inside.
Segmentation layout: images/ and masks/ subdirectories with matching
file stems; mask pixel values are class indices.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import IngestionError

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp"}


@dataclass
class SplitDataset:
    """In-memory split: images (N,3,H,W) in [0,1] plus targets and paths."""

    task: str
    images: torch.Tensor
    targets: torch.Tensor  # (N,) labels or (N,H,W) masks
    paths: list[str]
    num_classes: int
    class_names: list[str] = field(default_factory=list)
    class_counts: torch.Tensor | None = None  # train split only

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_size(self) -> tuple[int, int]:
        return self.images.shape[-2], self.images.shape[-1]


def _load_image(path: Path) -> torch.Tensor:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def _load_mask(path: Path) -> torch.Tensor:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.int64)
    return torch.from_numpy(arr)


def _list_images(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir()
                  if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS)


@lru_cache(maxsize=8)
def _load_items(path_str: str, task: str):
    """Load and cache the full dataset; splits are views into this."""
    root = Path(path_str)
    if not root.is_dir():
        raise IngestionError(f"dataset directory not found: {root}")
    offenders: list[str] = []
    if task == "classification":
        class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
        if not class_dirs:
            raise IngestionError(f"no class directories under {root}")
        class_names = [d.name for d in class_dirs]
        images, labels, paths = [], [], []
        for label, d in enumerate(class_dirs):
            for p in _list_images(d):
                try:
                    images.append(_load_image(p))
                except Exception:
                    offenders.append(str(p))
                    continue
                labels.append(label)
                paths.append(str(p))
        if offenders:
            raise IngestionError("unreadable image files", offenders)
        if not images:
            raise IngestionError(f"no images found under {root}")
        _check_uniform(images, paths)
        return (torch.stack(images), torch.tensor(labels, dtype=torch.long),
                paths, len(class_names), class_names)

    if task == "segmentation":
        img_dir, mask_dir = root / "images", root / "masks"
        if not img_dir.is_dir() or not mask_dir.is_dir():
            raise IngestionError(f"expected images/ and masks/ under {root}")
        images, masks, paths = [], [], []
        for p in _list_images(img_dir):
            mask_path = mask_dir / p.name
            if not mask_path.is_file():
                offenders.append(f"missing mask for {p}")
                continue
            try:
                images.append(_load_image(p))
                masks.append(_load_mask(mask_path))
            except Exception:
                offenders.append(str(p))
                continue
            paths.append(str(p))
        if offenders:
            raise IngestionError("malformed segmentation items", offenders)
        if not images:
            raise IngestionError(f"no images found under {img_dir}")
        _check_uniform(images, paths)
        mask_tensor = torch.stack(masks)
        num_classes = int(mask_tensor.max().item()) + 1
        if num_classes < 2:
            raise IngestionError("masks contain a single class")
        return torch.stack(images), mask_tensor, paths, num_classes, []

    raise IngestionError(f"unknown task {task!r}")


def _check_uniform(images: list[torch.Tensor], paths: list[str]) -> None:
    shape = images[0].shape
    bad = [paths[i] for i, im in enumerate(images) if im.shape != shape]
    if bad:
        raise IngestionError(f"images must share one shape {tuple(shape)}", bad)


def ingest_dataset(path: str | Path, task: str, seed: int,
                   split: float = 0.8) -> tuple[SplitDataset, SplitDataset]:
    """Split the dataset into disjoint, exhaustive train/validation parts.

    The shuffle is driven only by ``seed``, so identical seeds give
    identical membership.  Class counts (labels for classification,
    pixels for segmentation) are computed on the training split only.
    """
    if not 0.0 < split < 1.0:
        raise IngestionError(f"split fraction must be in (0,1), got {split}")
    images, targets, paths, num_classes, class_names = _load_items(str(path), task)
    n = images.shape[0]
    indices = list(range(n))
    random.Random(seed).shuffle(indices)
    n_train = int(round(split * n))
    n_train = min(max(n_train, 1), n - 1)
    train_idx = sorted(indices[:n_train])
    val_idx = sorted(indices[n_train:])

    def subset(idx: list[int], with_counts: bool) -> SplitDataset:
        sel = torch.tensor(idx, dtype=torch.long)
        tgt = targets[sel]
        counts = None
        if with_counts:
            flat = tgt.reshape(-1)
            counts = torch.bincount(flat, minlength=num_classes)
        return SplitDataset(
            task=task,
            images=images[sel],
            targets=tgt,
            paths=[paths[i] for i in idx],
            num_classes=num_classes,
            class_names=class_names,
            class_counts=counts,
        )

    return subset(train_idx, True), subset(val_idx, False)

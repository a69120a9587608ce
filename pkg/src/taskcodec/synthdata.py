"""Synthetic desk-scale datasets.

Classification: 32x32 images of thin low-contrast glyphs (one of ten
stencils) pasted at a random position over a strong smooth random
background, with distractor strokes and pixel noise.  The glyph is what
the task cares about but contributes almost nothing to MSE, so a codec
trained on reconstruction alone tends to wash it out.

Segmentation: 64x64 images of low-contrast filled shapes (disk, square,
diamond) over the same kind of background, with exact class masks.

Layouts match the trainer's ingestion contract:
  classification: root/<class_name>/*.png
  segmentation:   root/images/*.png + root/masks/*.png (same stems)
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

GLYPHS = [
    ["...#...", "...#...", "...#...", "#######", "...#...", "...#...", "...#..."],
    ["#.....#", ".#...#.", "..#.#..", "...#...", "..#.#..", ".#...#.", "#.....#"],
    ["#######", "#.....#", "#.....#", "#.....#", "#.....#", "#.....#", "#######"],
    ["...#...", "..#.#..", ".#...#.", "#.....#", ".#...#.", "..#.#..", "...#..."],
    ["#######", ".......", "#######", ".......", "#######", ".......", "#######"],
    ["#.#.#.#", "#.#.#.#", "#.#.#.#", "#.#.#.#", "#.#.#.#", "#.#.#.#", "#.#.#.#"],
    ["#######", "...#...", "...#...", "...#...", "...#...", "...#...", "...#..."],
    ["#......", "#......", "#......", "#......", "#......", "#......", "#######"],
    ["#######", ".....#.", "....#..", "...#...", "..#....", ".#.....", "#######"],
    ["#.....#", "#.....#", "#.....#", "#######", "#.....#", "#.....#", "#.....#"],
]


def _glyph_mask(index: int, scale: int = 1) -> np.ndarray:
    rows = GLYPHS[index]
    mask = np.array([[ch == "#" for ch in row] for row in rows], dtype=bool)
    if scale > 1:
        mask = np.kron(mask, np.ones((scale, scale), dtype=bool))
    return mask


def _smooth_background(rng: np.random.Generator, size: int, cells: int = 4) -> np.ndarray:
    """Bilinearly upsampled coarse random field, (size, size, 3) in [0.15, 0.85]."""
    coarse = rng.uniform(0.15, 0.85, size=(cells, cells, 3))
    grid = np.linspace(0, cells - 1, size)
    i0 = np.clip(np.floor(grid).astype(int), 0, cells - 2)
    frac = grid - i0
    top = coarse[i0] * (1 - frac)[:, None, None] + coarse[i0 + 1] * frac[:, None, None]
    out = (top[:, i0] * (1 - frac)[None, :, None]
           + top[:, i0 + 1] * frac[None, :, None])
    return out


def _contrast_offset(rng: np.random.Generator, local_mean: float,
                     lo: float, hi: float) -> float:
    amount = rng.uniform(lo, hi)
    return -amount if local_mean > 0.5 else amount


def _draw_segment(rng: np.random.Generator, img: np.ndarray,
                  lo: float, hi: float) -> None:
    """One thin random stroke, same contrast statistics as the glyphs."""
    size = img.shape[0]
    length = rng.integers(4, 8)
    r, c = rng.integers(1, size - 1, size=2)
    dr, dc = rng.choice([-1, 0, 1]), rng.choice([-1, 0, 1])
    if dr == 0 and dc == 0:
        dc = 1
    rows = np.clip(r + dr * np.arange(length), 0, size - 1)
    cols = np.clip(c + dc * np.arange(length), 0, size - 1)
    offset = _contrast_offset(rng, float(img[rows, cols].mean()), lo, hi)
    img[rows, cols] += offset


def make_classification_dataset(
    root: str | Path,
    images_per_class: int = 150,
    image_size: int = 32,
    num_classes: int = 10,
    seed: int = 0,
    glyph_contrast: tuple[float, float] = (0.28, 0.42),
    glyph_scale: int = 2,
    num_distractors: int = 2,
    pixel_noise: float = 0.02,
) -> Path:
    if num_classes > len(GLYPHS):
        raise ValueError(f"at most {len(GLYPHS)} glyph classes available")
    root = Path(root)
    rng = np.random.default_rng(seed)
    glyph_size = _glyph_mask(0, glyph_scale).shape[0]
    if glyph_size + 2 >= image_size:
        raise ValueError("glyph does not fit the image")
    for k in range(num_classes):
        class_dir = root / f"class_{k:02d}"
        class_dir.mkdir(parents=True, exist_ok=True)
        mask = _glyph_mask(k, glyph_scale)
        for i in range(images_per_class):
            img = _smooth_background(rng, image_size)
            for _ in range(num_distractors):
                _draw_segment(rng, img, *glyph_contrast)
            r = int(rng.integers(1, image_size - glyph_size - 1))
            c = int(rng.integers(1, image_size - glyph_size - 1))
            patch = img[r:r + glyph_size, c:c + glyph_size]
            offset = _contrast_offset(rng, float(patch[mask].mean()), *glyph_contrast)
            patch[mask] += offset
            img += rng.normal(0.0, pixel_noise, size=img.shape)
            _save_png(img, class_dir / f"img_{i:04d}.png")
    return root


def make_segmentation_dataset(
    root: str | Path,
    num_images: int = 240,
    image_size: int = 64,
    seed: int = 0,
    shape_contrast: tuple[float, float] = (0.18, 0.30),
    pixel_noise: float = 0.02,
) -> Path:
    """Shapes dataset with classes {0: background, 1: disk, 2: square, 3: diamond}."""
    root = Path(root)
    img_dir = root / "images"
    mask_dir = root / "masks"
    img_dir.mkdir(parents=True, exist_ok=True)
    mask_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:image_size, 0:image_size]
    for i in range(num_images):
        img = _smooth_background(rng, image_size)
        mask = np.zeros((image_size, image_size), dtype=np.uint8)
        for _ in range(int(rng.integers(2, 4))):
            cls = int(rng.integers(1, 4))
            radius = int(rng.integers(6, 12))
            cy = int(rng.integers(radius + 1, image_size - radius - 1))
            cx = int(rng.integers(radius + 1, image_size - radius - 1))
            if cls == 1:
                region = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
            elif cls == 2:
                region = (np.abs(yy - cy) <= radius) & (np.abs(xx - cx) <= radius)
            else:
                region = np.abs(yy - cy) + np.abs(xx - cx) <= radius
            offset = _contrast_offset(rng, float(img[region].mean()), *shape_contrast)
            img[region] += offset
            mask[region] = cls
        img += rng.normal(0.0, pixel_noise, size=img.shape)
        _save_png(img, img_dir / f"img_{i:04d}.png")
        Image.fromarray(mask, mode="L").save(mask_dir / f"img_{i:04d}.png")
    return root


def _save_png(img: np.ndarray, path: Path) -> None:
    u8 = (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(path)

"""JPEG comparison harness and rate-accuracy curve emission.

For each JPEG quality a fresh task head is trained on re-encoded
training images and evaluated on re-encoded validation images; bpp is
the mean encoded byte count over the validation set.  Curves merge
learned-codec operating points with the JPEG grid.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch.optim import Adam

from .config import RunConfig
from .data import ingest_dataset
from .errors import IngestionError
from .heads import MetricsRecord, accuracy
from .objectives import classification_loss
from .trainer import make_head

DEFAULT_QUALITIES = (2, 5, 10, 15, 25, 50)


@dataclass
class JpegOperatingPoint:
    quality: int
    bpp: float
    accuracy: float

    def __post_init__(self):
        if self.quality < 1:
            raise ValueError(f"quality must be >= 1, got {self.quality}")
        if self.bpp <= 0:
            raise ValueError(f"bpp must be > 0, got {self.bpp}")


def jpeg_roundtrip(image: torch.Tensor, quality: int) -> tuple[torch.Tensor, int]:
    """Re-encode one (3,H,W) tensor through JPEG; returns (decoded, bytes)."""
    arr = (image.clamp(0, 1).permute(1, 2, 0).numpy() * 255.0).round().astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="JPEG", quality=int(quality))
    nbytes = buf.tell()
    buf.seek(0)
    with Image.open(buf) as im:
        decoded = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(decoded).permute(2, 0, 1).contiguous(), nbytes


def _jpeg_batch(images: torch.Tensor, quality: int) -> tuple[torch.Tensor, list[int]]:
    decoded, sizes = [], []
    for i in range(images.shape[0]):
        img, nbytes = jpeg_roundtrip(images[i], quality)
        decoded.append(img)
        sizes.append(nbytes)
    return torch.stack(decoded), sizes


def jpeg_baseline(data_dir: str, qualities: list[int],
                  config: RunConfig) -> list[JpegOperatingPoint]:
    """One operating point per quality: fresh head trained on JPEG data."""
    if not qualities:
        raise ValueError("need at least one quality")
    if config.task != "classification":
        raise ValueError("the JPEG harness currently covers classification")
    train, val = ingest_dataset(data_dir, config.task, config.seed, config.split)
    h, w = train.image_size
    points: list[JpegOperatingPoint] = []
    failures: list[dict] = []
    for quality in qualities:
        try:
            train_imgs, _ = _jpeg_batch(train.images, quality)
            val_imgs, val_sizes = _jpeg_batch(val.images, quality)
            bpp = sum(val_sizes) * 8.0 / (len(val_sizes) * h * w)
            acc = _train_and_eval_head(config, train_imgs, train.targets,
                                       val_imgs, val.targets, train.num_classes)
            points.append(JpegOperatingPoint(int(quality), bpp, acc))
        except Exception as err:  # skip the point, keep the sweep alive
            failures.append({"quality": int(quality), "error": str(err)})
    if failures and not points:
        raise IngestionError(f"all JPEG qualities failed: {failures}")
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "jpeg_points.json").write_text(
        json.dumps({"points": [asdict(p) for p in points], "failures": failures},
                   indent=2, sort_keys=True))
    return points


def _train_and_eval_head(config, train_imgs, train_targets, val_imgs,
                         val_targets, num_classes) -> float:
    torch.manual_seed(config.seed)
    head = make_head(config.task, num_classes, int(train_imgs.shape[1]))
    opt = Adam(head.parameters(), lr=config.lr)
    g = torch.Generator().manual_seed(config.seed + 1)
    best = 0.0
    n = train_imgs.shape[0]
    for _ in range(config.epochs):
        perm = torch.randperm(n, generator=g)
        for start in range(0, n, config.batch):
            idx = perm[start:start + config.batch]
            loss = classification_loss(head(train_imgs[idx]), train_targets[idx])
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
        head.eval()
        with torch.no_grad():
            preds = []
            for start in range(0, val_imgs.shape[0], 64):
                preds.append(head(val_imgs[start:start + 64]).argmax(dim=1))
            best = max(best, accuracy(torch.cat(preds), val_targets))
        head.train()
    return best


def emit_curves(records: list[MetricsRecord],
                jpeg_points: list[JpegOperatingPoint],
                baseline_accuracy: float | None,
                out_csv: str | Path,
                out_plot: str | Path | None = None) -> Path:
    """Write the joint operating-point CSV (sorted by bpp) and the curve plot.

    CSV columns: source, beta_or_quality, bpp, accuracy.  The plot draws
    one curve per source plus a dashed reference line at the
    uncompressed-baseline accuracy.
    """
    entries = [("learned", f"{r.beta:g}", r.bpp, r.accuracy) for r in records]
    entries += [("jpeg", str(p.quality), p.bpp, p.accuracy) for p in jpeg_points]
    if not entries:
        raise ValueError("need at least one record to report")
    entries.sort(key=lambda e: e[2])
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with open(out_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("source", "beta_or_quality", "bpp", "accuracy"))
        for source, knob, bpp, acc in entries:
            writer.writerow((source, knob, repr(float(bpp)), repr(float(acc))))
    if out_plot is not None:
        _plot_curves(entries, baseline_accuracy, Path(out_plot))
    return out_csv


def _plot_curves(entries, baseline_accuracy, out_plot: Path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for source, style in (("learned", "o-"), ("jpeg", "s-")):
        pts = [(bpp, acc) for src, _, bpp, acc in entries if src == source]
        if pts:
            xs, ys = zip(*pts)
            ax.plot(xs, ys, style, label=source)
    if baseline_accuracy is not None:
        ax.axhline(baseline_accuracy, color="green", linestyle="--",
                   label="uncompressed")
    ax.set_xlabel("bits per pixel")
    ax.set_ylabel("accuracy [%]")
    ax.legend()
    fig.tight_layout()
    out_plot.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_plot, dpi=120)
    plt.close(fig)

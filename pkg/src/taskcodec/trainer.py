"""Training regimes: baseline (no compression), task-agnostic two-stage,
and joint task-aware training, plus the rate-weight sweep.

Every run emits a per-epoch metrics CSV, a JSON summary and a best
checkpoint.  Validation bpp always comes from real range-coded
bitstreams, never from the differentiable estimate.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import torch
from torch.optim import Adam

from .bitstream import encode_stream
from .bottleneck import Bottleneck, LatentCode
from .config import RunConfig
from .data import SplitDataset, ingest_dataset
from .entropy import FactorizedEntropyModel
from .errors import TrainingAbortError
from .heads import (MetricsRecord, SmallClassifier, SmallSegmenter, accuracy,
                    mean_iou)
from .objectives import (LossWeights, classification_loss, distortion_loss,
                         inverse_frequency_weights, segmentation_loss,
                         total_loss)

CSV_HEADER = ("epoch", "L_D", "L_T", "L_R", "L_total",
              "val_accuracy", "val_miou", "bpp")
_EVAL_BATCH = 64


@dataclass
class EpochRow:
    epoch: int
    l_d: float | None
    l_t: float | None
    l_r: float | None
    l_total: float | None
    val_accuracy: float | None
    val_miou: float | None
    bpp: float | None


@dataclass
class RunResult:
    config: RunConfig
    record: MetricsRecord
    rows: list[EpochRow]
    run_dir: Path
    csv_path: Path
    summary_path: Path
    checkpoint_path: Path
    summary: dict


def build_models(config: RunConfig, num_classes: int, image_channels: int = 3):
    """Bottleneck, entropy model and task head, in a fixed build order so a
    fixed torch seed fully determines the initialization."""
    bottleneck = Bottleneck(config.latent_channels, config.hidden_channels,
                            image_channels)
    entropy = FactorizedEntropyModel(config.latent_channels)
    head = make_head(config.task, num_classes, image_channels)
    return bottleneck, entropy, head


def make_head(task: str, num_classes: int, image_channels: int = 3):
    if task == "classification":
        return SmallClassifier(num_classes, image_channels)
    return SmallSegmenter(num_classes, image_channels)


def state_digest(*modules: torch.nn.Module) -> str:
    """Hash of all parameter/buffer bytes; detects any training-time drift."""
    h = hashlib.sha256()
    for module in modules:
        for key, value in sorted(module.state_dict().items()):
            h.update(key.encode())
            h.update(value.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def _snapshot(module: torch.nn.Module | None):
    if module is None:
        return None
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


def _task_loss(task, head, inputs, targets, weights, class_weights):
    out = head(inputs)
    if task == "classification":
        return classification_loss(out, targets)
    return segmentation_loss(out, targets, weights, class_weights)


@torch.no_grad()
def _predictions(task, head, inputs: torch.Tensor) -> torch.Tensor:
    was_training = head.training
    head.eval()
    preds = []
    for start in range(0, inputs.shape[0], _EVAL_BATCH):
        preds.append(head(inputs[start:start + _EVAL_BATCH]).argmax(dim=1))
    head.train(was_training)
    return torch.cat(preds)


def _metrics(task, preds: torch.Tensor, val: SplitDataset):
    acc = accuracy(preds, val.targets)
    miou = mean_iou(preds, val.targets, val.num_classes) if task == "segmentation" else None
    return acc, miou


@torch.no_grad()
def _batched_recon(bottleneck: Bottleneck, images: torch.Tensor) -> torch.Tensor:
    was_training = bottleneck.training
    bottleneck.eval()
    outs = []
    for start in range(0, images.shape[0], _EVAL_BATCH):
        recon, _ = bottleneck(images[start:start + _EVAL_BATCH], "eval")
        outs.append(recon)
    bottleneck.train(was_training)
    return torch.cat(outs)


@torch.no_grad()
def _codec_val_bpp(bottleneck: Bottleneck, entropy: FactorizedEntropyModel,
                   val: SplitDataset) -> float:
    """Mean whole-file bpp of real bitstreams over the validation set."""
    was_training = bottleneck.training
    bottleneck.eval()
    h, w = val.image_size
    total_bits = 0.0
    for start in range(0, len(val), _EVAL_BATCH):
        _, latent = bottleneck(val.images[start:start + _EVAL_BATCH], "eval")
        for i in range(latent.data.shape[0]):
            stream = encode_stream(LatentCode(latent.data[i:i + 1], latent.state),
                                   entropy)
            total_bits += len(stream.to_bytes()) * 8.0
    bottleneck.train(was_training)
    return total_bits / (len(val) * h * w)


def stored_file_bpp(paths: list[str], height: int, width: int) -> float:
    """Mean bits per pixel of the raw dataset files on disk."""
    sizes = [Path(p).stat().st_size for p in paths]
    return sum(sizes) * 8.0 / (len(sizes) * height * width)


class _Runner:
    """Shared per-run state: data, output files, best-epoch tracking."""

    def __init__(self, config: RunConfig):
        config.validate()
        self.config = config
        self.train_set, self.val_set = ingest_dataset(
            config.data_dir, config.task, config.seed, config.split)
        self.h, self.w = self.train_set.image_size
        if config.task == "segmentation":
            self.class_weights = inverse_frequency_weights(self.train_set.class_counts)
        else:
            self.class_weights = None
        self.rows: list[EpochRow] = []
        self.best_primary = float("-inf")
        self.best_epoch = -1
        self.best_state = None
        self.best_bpp = None
        self.run_dir = Path(config.out_dir) / (
            f"{config.regime}-{config.task}-b{config.beta:g}-s{config.seed}")
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.g_data = torch.Generator().manual_seed(config.seed + 1)
        self.g_noise = torch.Generator().manual_seed(config.seed + 2)

    def primary_metric(self, acc, miou):
        return miou if self.config.task == "segmentation" else acc

    def consider_best(self, epoch, acc, miou, bpp, modules: dict):
        metric = self.primary_metric(acc, miou)
        if metric is not None and metric > self.best_primary:
            self.best_primary = metric
            self.best_epoch = epoch
            self.best_bpp = bpp
            self.best_state = {name: _snapshot(m) for name, m in modules.items()}

    def add_row(self, row: EpochRow):
        self.rows.append(row)

    def train_batches(self, n: int):
        perm = torch.randperm(n, generator=self.g_data)
        batch = self.config.batch
        for start in range(0, n, batch):
            yield perm[start:start + batch]

    def abort(self, err: TrainingAbortError, epoch: int):
        if self.best_state is not None:
            self._save_checkpoint(self.run_dir / "checkpoint.pt")
        raise TrainingAbortError(err.term, epoch, checkpoint=self.best_state) from err

    def _save_checkpoint(self, path: Path):
        payload = {
            "format": 1,
            "config": asdict(self.config),
            "config_digest": self.config.digest(),
            "arch": {
                "num_classes": self.train_set.num_classes,
                "image_channels": int(self.train_set.images.shape[1]),
                "image_size": [self.h, self.w],
            },
            "epoch": self.best_epoch,
            "best_metric": self.best_primary,
            "class_weights": self.class_weights,
        }
        payload.update(self.best_state or {})
        torch.save(payload, path)

    def finalize(self) -> RunResult:
        csv_path = self.run_dir / "metrics.csv"
        _write_csv(csv_path, self.rows)
        ckpt_path = self.run_dir / "checkpoint.pt"
        self._save_checkpoint(ckpt_path)
        accs = [r.val_accuracy for r in self.rows if r.val_accuracy is not None]
        mious = [r.val_miou for r in self.rows if r.val_miou is not None]
        record = MetricsRecord(
            task=self.config.task,
            regime=self.config.regime,
            seed=self.config.seed,
            beta=self.config.beta,
            accuracy=max(accs),
            bpp=self.best_bpp if self.best_bpp is not None else 0.0,
            mean_iou=max(mious) if mious else None,
        )
        summary = {
            "config": asdict(self.config),
            "config_digest": self.config.digest(),
            "record": asdict(record),
            "best_epoch": self.best_epoch,
            "epochs_logged": len(self.rows),
            "csv": str(csv_path),
            "checkpoint": str(ckpt_path),
        }
        summary_path = self.run_dir / "summary.json"
        summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True))
        self.config.to_file(self.run_dir / "config.txt")
        return RunResult(self.config, record, self.rows, self.run_dir,
                         csv_path, summary_path, ckpt_path, summary)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, int):
        return str(x)
    return repr(float(x))


def _write_csv(path: Path, rows: list[EpochRow]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in rows:
            writer.writerow([_fmt(v) for v in (r.epoch, r.l_d, r.l_t, r.l_r,
                                               r.l_total, r.val_accuracy,
                                               r.val_miou, r.bpp)])


def train_tactic(config: RunConfig) -> RunResult:
    """Joint training: one optimizer over encoder, decoder, entropy model
    and task head, minimizing distortion + alpha*task + beta*rate."""
    if config.regime != "tactic":
        raise ValueError(f"train_tactic requires regime='tactic', got {config.regime!r}")
    torch.manual_seed(config.seed)
    runner = _Runner(config)
    bottleneck, entropy, head = build_models(
        config, runner.train_set.num_classes,
        int(runner.train_set.images.shape[1]))
    weights = config.weights()
    opt = Adam([*bottleneck.parameters(), *entropy.parameters(),
                *head.parameters()], lr=config.lr)
    modules = {"bottleneck": bottleneck, "entropy": entropy, "head": head}
    train = runner.train_set
    for epoch in range(1, config.epochs + 1):
        sums = [0.0, 0.0, 0.0, 0.0]
        steps = 0
        for idx in runner.train_batches(len(train)):
            img = train.images[idx]
            tgt = train.targets[idx]
            recon, latent = bottleneck(img, "train", runner.g_noise)
            l_d = distortion_loss(recon, img)
            l_t = _task_loss(config.task, head, recon, tgt, weights,
                             runner.class_weights)
            l_r = entropy.rate_loss(latent, runner.h, runner.w)
            try:
                bd = total_loss(l_d, l_t, l_r, weights)
            except TrainingAbortError as err:
                runner.abort(err, epoch)
            opt.zero_grad(set_to_none=True)
            bd.total.backward()
            opt.step()
            for i, v in enumerate(bd.as_floats()):
                sums[i] += v
            steps += 1
        val_recon = _batched_recon(bottleneck, runner.val_set.images)
        preds = _predictions(config.task, head, val_recon)
        acc, miou = _metrics(config.task, preds, runner.val_set)
        bpp = _codec_val_bpp(bottleneck, entropy, runner.val_set)
        runner.consider_best(epoch, acc, miou, bpp, modules)
        runner.add_row(EpochRow(epoch, *(s / steps for s in sums), acc, miou, bpp))
    return runner.finalize()


def train_agnostic(config: RunConfig) -> RunResult:
    """Two-stage training: the codec is fit on distortion (+rate) alone,
    then frozen while the task head trains on hard-quantized
    reconstructions."""
    if config.regime != "agnostic":
        raise ValueError(f"train_agnostic requires regime='agnostic', got {config.regime!r}")
    torch.manual_seed(config.seed)
    runner = _Runner(config)
    bottleneck, entropy, head = build_models(
        config, runner.train_set.num_classes,
        int(runner.train_set.images.shape[1]))
    weights = config.weights()
    modules = {"bottleneck": bottleneck, "entropy": entropy, "head": head}
    train = runner.train_set

    # Stage 1: codec only (entropy model participates through the rate term).
    opt1 = Adam([*bottleneck.parameters(), *entropy.parameters()], lr=config.lr)
    stage1_weights = LossWeights(alpha=0.0, beta=weights.beta, gamma=weights.gamma)
    zero = torch.zeros(())
    for epoch in range(1, config.epochs + 1):
        sums = [0.0, 0.0, 0.0, 0.0]
        steps = 0
        for idx in runner.train_batches(len(train)):
            img = train.images[idx]
            recon, latent = bottleneck(img, "train", runner.g_noise)
            l_d = distortion_loss(recon, img)
            l_r = entropy.rate_loss(latent, runner.h, runner.w)
            try:
                bd = total_loss(l_d, zero, l_r, stage1_weights)
            except TrainingAbortError as err:
                runner.abort(err, epoch)
            opt1.zero_grad(set_to_none=True)
            bd.total.backward()
            opt1.step()
            for i, v in enumerate(bd.as_floats()):
                sums[i] += v
            steps += 1
        bpp = _codec_val_bpp(bottleneck, entropy, runner.val_set)
        runner.add_row(EpochRow(epoch, sums[0] / steps, None, sums[2] / steps,
                                sums[3] / steps, None, None, bpp))

    # Stage 2: freeze the codec, train the head on its eval-mode output.
    bottleneck.eval()
    for p in (*bottleneck.parameters(), *entropy.parameters()):
        p.requires_grad_(False)
    frozen_digest = state_digest(bottleneck, entropy)
    train_recon = _batched_recon(bottleneck, train.images)
    val_recon = _batched_recon(bottleneck, runner.val_set.images)
    val_bpp = _codec_val_bpp(bottleneck, entropy, runner.val_set)
    opt2 = Adam(head.parameters(), lr=config.lr)
    for epoch in range(1, config.epochs + 1):
        l_sum, steps = 0.0, 0
        for idx in runner.train_batches(len(train)):
            l_t = _task_loss(config.task, head, train_recon[idx],
                             train.targets[idx], weights, runner.class_weights)
            try:
                bd = total_loss(zero, l_t, zero, LossWeights(1.0, 0.0, weights.gamma))
            except TrainingAbortError as err:
                runner.abort(err, config.epochs + epoch)
            opt2.zero_grad(set_to_none=True)
            bd.total.backward()
            opt2.step()
            l_sum += float(bd.task.detach())
            steps += 1
        preds = _predictions(config.task, head, val_recon)
        acc, miou = _metrics(config.task, preds, runner.val_set)
        row_epoch = config.epochs + epoch
        runner.consider_best(row_epoch, acc, miou, val_bpp, modules)
        runner.add_row(EpochRow(row_epoch, None, l_sum / steps, None,
                                l_sum / steps, acc, miou, val_bpp))
    if state_digest(bottleneck, entropy) != frozen_digest:
        raise RuntimeError("frozen codec parameters changed during stage 2")
    return runner.finalize()


def train_baseline(config: RunConfig) -> RunResult:
    """Task head trained directly on the original images; bpp is reported
    from the stored file sizes of the validation inputs."""
    if config.regime != "baseline":
        raise ValueError(f"train_baseline requires regime='baseline', got {config.regime!r}")
    torch.manual_seed(config.seed)
    runner = _Runner(config)
    head = make_head(config.task, runner.train_set.num_classes,
                     int(runner.train_set.images.shape[1]))
    weights = config.weights()
    modules = {"bottleneck": None, "entropy": None, "head": head}
    train = runner.train_set
    file_bpp = stored_file_bpp(runner.val_set.paths, runner.h, runner.w)
    opt = Adam(head.parameters(), lr=config.lr)
    zero = torch.zeros(())
    for epoch in range(1, config.epochs + 1):
        l_sum, steps = 0.0, 0
        for idx in runner.train_batches(len(train)):
            l_t = _task_loss(config.task, head, train.images[idx],
                             train.targets[idx], weights, runner.class_weights)
            try:
                bd = total_loss(zero, l_t, zero, LossWeights(1.0, 0.0, weights.gamma))
            except TrainingAbortError as err:
                runner.abort(err, epoch)
            opt.zero_grad(set_to_none=True)
            bd.total.backward()
            opt.step()
            l_sum += float(bd.task.detach())
            steps += 1
        preds = _predictions(config.task, head, runner.val_set.images)
        acc, miou = _metrics(config.task, preds, runner.val_set)
        runner.consider_best(epoch, acc, miou, file_bpp, modules)
        runner.add_row(EpochRow(epoch, None, l_sum / steps, None,
                                l_sum / steps, acc, miou, file_bpp))
    return runner.finalize()


def run_training(config: RunConfig) -> RunResult:
    return {"tactic": train_tactic,
            "agnostic": train_agnostic,
            "baseline": train_baseline}[config.regime](config)


def sweep_beta(config: RunConfig, betas: list[float]) -> list[MetricsRecord]:
    """One joint run per rate weight; failures are recorded and skipped."""
    if not betas:
        raise ValueError("need at least one beta")
    records = []
    failures = []
    for beta in betas:
        cfg = replace(config, regime="tactic", beta=float(beta))
        try:
            records.append(run_training(cfg).record)
        except Exception as err:  # keep sweeping; report at the end
            failures.append({"beta": float(beta), "error": str(err)})
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "sweep_records.json").write_text(
        json.dumps([asdict(r) for r in records], indent=2, sort_keys=True))
    if failures:
        (out_dir / "sweep_failures.json").write_text(
            json.dumps(failures, indent=2, sort_keys=True))
    return records


def load_checkpoint(path: str | Path):
    """Rebuild the trained modules from a checkpoint file."""
    payload = torch.load(path, map_location="cpu", weights_only=True)
    config = RunConfig.from_mapping(payload["config"])
    arch = payload["arch"]
    head = make_head(config.task, arch["num_classes"], arch["image_channels"])
    head.load_state_dict(payload["head"])
    head.eval()
    bottleneck = entropy = None
    if payload.get("bottleneck") is not None:
        bottleneck = Bottleneck(config.latent_channels, config.hidden_channels,
                                arch["image_channels"])
        bottleneck.load_state_dict(payload["bottleneck"])
        bottleneck.eval()
    if payload.get("entropy") is not None:
        entropy = FactorizedEntropyModel(config.latent_channels)
        entropy.load_state_dict(payload["entropy"])
        entropy.eval()
    return {
        "config": config,
        "arch": arch,
        "epoch": payload["epoch"],
        "best_metric": payload["best_metric"],
        "bottleneck": bottleneck,
        "entropy": entropy,
        "head": head,
        "class_weights": payload.get("class_weights"),
    }


@torch.no_grad()
def evaluate_checkpoint(path: str | Path, data_dir: str | None = None):
    """Reload a checkpoint and recompute its validation metrics."""
    bundle = load_checkpoint(path)
    config: RunConfig = bundle["config"]
    if data_dir is not None:
        config = replace(config, data_dir=data_dir)
    _, val = ingest_dataset(config.data_dir, config.task, config.seed, config.split)
    if bundle["bottleneck"] is not None:
        inputs = _batched_recon(bundle["bottleneck"], val.images)
        bpp = _codec_val_bpp(bundle["bottleneck"], bundle["entropy"], val)
    else:
        inputs = val.images
        h, w = val.image_size
        bpp = stored_file_bpp(val.paths, h, w)
    preds = _predictions(config.task, bundle["head"], inputs)
    acc, miou = _metrics(config.task, preds, val)
    return {"accuracy": acc, "mean_iou": miou, "bpp": bpp}

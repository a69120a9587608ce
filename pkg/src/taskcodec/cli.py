"""Command-line surface: train/sweep runs, compress/decompress files,
the JPEG harness and the rate-accuracy report.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from . import bitstream as bs
from .bottleneck import LatentCode, quantize_eval
from .config import RunConfig, parse_ratio
from .errors import (BitstreamError, IngestionError, RejectedInputError,
                     TaskCodecError, TrainingAbortError)
from .heads import MetricsRecord
from .jpeg_harness import (DEFAULT_QUALITIES, JpegOperatingPoint, emit_curves,
                           jpeg_baseline)
from .trainer import load_checkpoint, run_training, sweep_beta

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--regime", choices=("baseline", "agnostic", "tactic"))
    p.add_argument("--task", choices=("classification", "segmentation"))
    p.add_argument("--alpha", type=parse_ratio)
    p.add_argument("--beta", type=parse_ratio)
    p.add_argument("--gamma", type=parse_ratio)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--split", type=float)
    p.add_argument("--latent-channels", dest="latent_channels", type=int)
    p.add_argument("--hidden-channels", dest="hidden_channels", type=int)
    p.add_argument("--out-dir", dest="out_dir")


def _config_from_args(args) -> RunConfig:
    mapping: dict = {}
    if args.config:
        mapping.update(
            {k: v for k, v in asdict(RunConfig.from_file(args.config)).items()})
    for key in ("regime", "task", "alpha", "beta", "gamma", "lr", "batch",
                "epochs", "seed", "data_dir", "split", "latent_channels",
                "hidden_channels", "out_dir"):
        value = getattr(args, key, None)
        if value is not None:
            mapping[key] = value
    if not mapping.get("data_dir"):
        raise IngestionError("no data_dir given (flag --data-dir or config file)")
    return RunConfig.from_mapping(mapping)


def _load_image_tensor(path: str) -> torch.Tensor:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except FileNotFoundError:
        raise IngestionError(f"image not found: {path}")
    except Exception as err:
        raise IngestionError(f"cannot decode image {path}: {err}")
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0).contiguous()


def _pad_to_multiple_of_4(image: torch.Tensor) -> tuple[torch.Tensor, tuple[int, int] | None]:
    h, w = image.shape[-2:]
    pad_h = (-h) % 4
    pad_w = (-w) % 4
    if pad_h == 0 and pad_w == 0:
        return image, None
    if h < 4 or w < 4:
        raise RejectedInputError(f"image too small to pad: {h}x{w}")
    return F.pad(image, (0, pad_w, 0, pad_h), mode="reflect"), (h, w)


def _load_codec(checkpoint_path: str):
    try:
        bundle = load_checkpoint(checkpoint_path)
    except FileNotFoundError:
        raise IngestionError(f"checkpoint not found: {checkpoint_path}")
    if bundle["bottleneck"] is None or bundle["entropy"] is None:
        raise IngestionError("checkpoint has no codec (baseline regime?)")
    return bundle


def cmd_train(args) -> int:
    config = _config_from_args(args)
    result = run_training(config)
    record = result.record
    miou = "" if record.mean_iou is None else f" miou={record.mean_iou:.2f}"
    print(f"{config.regime} seed={config.seed} beta={config.beta:g} "
          f"best_accuracy={record.accuracy:.2f}{miou} bpp={record.bpp:.4f} "
          f"run_dir={result.run_dir}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _config_from_args(args)
    betas = [parse_ratio(b) for b in args.beta_list.split(",") if b.strip()]
    records = sweep_beta(config, betas)
    for r in records:
        print(f"beta={r.beta:g} accuracy={r.accuracy:.2f} bpp={r.bpp:.4f}")
    csv_path = Path(config.out_dir) / "sweep_curve.csv"
    emit_curves(records, [], None, csv_path)
    print(f"curve CSV: {csv_path}")
    return EXIT_OK


@torch.no_grad()
def cmd_compress(args) -> int:
    bundle = _load_codec(args.checkpoint)
    image = _load_image_tensor(args.input)
    true_h, true_w = image.shape[-2:]
    padded, true_size = _pad_to_multiple_of_4(image)
    bottleneck, entropy = bundle["bottleneck"], bundle["entropy"]
    latent = quantize_eval(bottleneck.encode(padded))
    stream = bs.encode_stream(latent, entropy, true_size=true_size)
    data = stream.to_bytes()
    Path(args.output).write_bytes(data)
    bpp = len(data) * 8.0 / (true_h * true_w)
    print(f"{args.output}: {len(data)} bytes, {bpp:.4f} bpp")
    return EXIT_OK


@torch.no_grad()
def cmd_decompress(args) -> int:
    bundle = _load_codec(args.checkpoint)
    try:
        raw = Path(args.input).read_bytes()
    except FileNotFoundError:
        raise IngestionError(f"bitstream not found: {args.input}")
    stream = bs.Bitstream.from_bytes(raw)
    latent = bs.decode_stream(stream, bundle["entropy"])
    recon = bundle["bottleneck"].decode(latent).clamp(0.0, 1.0)
    if stream.true_size is not None:
        th, tw = stream.true_size
        recon = recon[..., :th, :tw]
    arr = (recon[0].permute(1, 2, 0).numpy() * 255.0).round().astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(args.output)
    print(f"{args.output}: {arr.shape[1]}x{arr.shape[0]}")
    return EXIT_OK


def cmd_jpeg_baseline(args) -> int:
    config = _config_from_args(args)
    qualities = [int(q) for q in args.quality_list.split(",") if q.strip()]
    points = jpeg_baseline(config.data_dir, qualities, config)
    for p in points:
        print(f"quality={p.quality} bpp={p.bpp:.4f} accuracy={p.accuracy:.2f}")
    print(f"points JSON: {Path(config.out_dir) / 'jpeg_points.json'}")
    return EXIT_OK


def cmd_report(args) -> int:
    records: list[MetricsRecord] = []
    for path in args.records or []:
        records.extend(_read_records(path))
    jpeg_points = _read_jpeg_points(args.jpeg) if args.jpeg else []
    baseline_acc = args.baseline_accuracy
    if baseline_acc is None and args.baseline_summary:
        summary = json.loads(Path(args.baseline_summary).read_text())
        baseline_acc = summary["record"]["accuracy"]
    out_csv = Path(args.out_dir) / "curve.csv"
    out_plot = Path(args.out_dir) / "curve.png"
    emit_curves(records, jpeg_points, baseline_acc, out_csv, out_plot)
    print(f"report: {out_csv} {out_plot}")
    return EXIT_OK


def _read_records(path: str) -> list[MetricsRecord]:
    try:
        payload = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise IngestionError(f"records file not found: {path}")
    if isinstance(payload, dict) and "record" in payload:  # run summary
        payload = [payload["record"]]
    if not isinstance(payload, list):
        raise IngestionError(f"unrecognized records layout in {path}")
    return [MetricsRecord(**entry) for entry in payload]


def _read_jpeg_points(path: str) -> list[JpegOperatingPoint]:
    try:
        payload = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise IngestionError(f"JPEG points file not found: {path}")
    if isinstance(payload, dict):
        payload = payload.get("points", [])
    return [JpegOperatingPoint(**entry) for entry in payload]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="taskcodec",
                     description="Task-aware learned image codec toolkit")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p_train = sub.add_parser("train", help="run one training regime")
    _add_run_flags(p_train)
    p_train.set_defaults(fn=cmd_train)

    p_sweep = sub.add_parser("sweep", help="sweep the rate weight beta")
    _add_run_flags(p_sweep)
    p_sweep.add_argument("--beta-list", default="4,2,1,1/32,1/128",
                         help="comma-separated betas; fractions allowed")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_comp = sub.add_parser("compress", help="compress an image file")
    p_comp.add_argument("--checkpoint", required=True)
    p_comp.add_argument("--input", required=True)
    p_comp.add_argument("--output", required=True)
    p_comp.set_defaults(fn=cmd_compress)

    p_dec = sub.add_parser("decompress", help="decompress a bitstream file")
    p_dec.add_argument("--checkpoint", required=True)
    p_dec.add_argument("--input", required=True)
    p_dec.add_argument("--output", required=True)
    p_dec.set_defaults(fn=cmd_decompress)

    p_jpeg = sub.add_parser("jpeg-baseline", help="JPEG quality sweep harness")
    _add_run_flags(p_jpeg)
    p_jpeg.add_argument("--quality-list",
                        default=",".join(str(q) for q in DEFAULT_QUALITIES))
    p_jpeg.set_defaults(fn=cmd_jpeg_baseline)

    p_rep = sub.add_parser("report", help="emit rate-accuracy curve CSV + plot")
    p_rep.add_argument("--records", nargs="*",
                       help="run summary JSONs or sweep_records.json files")
    p_rep.add_argument("--jpeg", help="jpeg_points.json from jpeg-baseline")
    p_rep.add_argument("--baseline-summary",
                       help="summary.json of a baseline run (reference line)")
    p_rep.add_argument("--baseline-accuracy", type=float)
    p_rep.add_argument("--out-dir", default="report")
    p_rep.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except TrainingAbortError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (IngestionError, RejectedInputError, BitstreamError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except TaskCodecError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

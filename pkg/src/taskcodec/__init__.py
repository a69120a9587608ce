"""Task-aware learned lossy image compression toolkit."""

from .bitstream import Bitstream, decode_stream, encode_stream, measured_bpp
from .bottleneck import (Bottleneck, LatentCode, quantize_eval, quantize_train,
                         round_half_away_from_zero)
from .config import RunConfig
from .data import ingest_dataset
from .entropy import FactorizedEntropyModel
from .heads import (MetricsRecord, SmallClassifier, SmallSegmenter, accuracy,
                    mean_iou)
from .jpeg_harness import JpegOperatingPoint, emit_curves, jpeg_baseline
from .objectives import (LossBreakdown, LossWeights, classification_loss,
                         dice_loss, distortion_loss, segmentation_loss,
                         total_loss)
from .trainer import (run_training, sweep_beta, train_agnostic, train_baseline,
                      train_tactic)

__all__ = [
    "Bitstream", "Bottleneck", "FactorizedEntropyModel", "JpegOperatingPoint",
    "LatentCode", "LossBreakdown", "LossWeights", "MetricsRecord", "RunConfig",
    "SmallClassifier", "SmallSegmenter", "accuracy", "classification_loss",
    "decode_stream", "dice_loss", "distortion_loss", "emit_curves",
    "encode_stream", "ingest_dataset", "jpeg_baseline", "mean_iou",
    "measured_bpp", "quantize_eval", "quantize_train", "round_half_away_from_zero",
    "run_training", "segmentation_loss", "sweep_beta", "total_loss",
    "train_agnostic", "train_baseline", "train_tactic",
]

__version__ = "0.1.0"

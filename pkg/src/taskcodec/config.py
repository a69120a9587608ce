"""Run configuration: dataclass, flat key-value config files, digests."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .objectives import LossWeights

REGIMES = ("baseline", "agnostic", "tactic")
TASKS = ("classification", "segmentation")

# Documented config-file keys (flat `key = value` lines, # comments).
CONFIG_KEYS = ("regime", "task", "alpha", "beta", "gamma", "lr", "batch",
               "epochs", "seed", "data_dir", "split", "latent_channels",
               "hidden_channels", "out_dir")


@dataclass
class RunConfig:
    regime: str = "tactic"
    task: str = "classification"
    alpha: float = 1.0
    beta: float = 0.0
    gamma: float = 0.0
    lr: float | None = None  # task default: 0.001 classification, 0.0001 segmentation
    batch: int | None = None  # task default: 32 classification, 3 segmentation
    epochs: int = 30
    seed: int = 0
    data_dir: str = ""
    split: float = 0.8
    latent_channels: int = 8
    hidden_channels: int = 32
    out_dir: str = "runs"

    def __post_init__(self):
        if self.lr is None:
            self.lr = 0.001 if self.task == "classification" else 0.0001
        if self.batch is None:
            self.batch = 32 if self.task == "classification" else 3
        self.validate()

    def validate(self) -> None:
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if not 0.0 < self.split < 1.0:
            raise ValueError(f"split fraction must be in (0,1), got {self.split}")
        if self.batch < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch}")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        self.weights()  # validates alpha/beta/gamma

    def weights(self) -> LossWeights:
        return LossWeights(alpha=self.alpha, beta=self.beta, gamma=self.gamma)

    def digest(self) -> str:
        payload = "\n".join(f"{k}={v}" for k, v in sorted(asdict(self).items()))
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    @classmethod
    def from_mapping(cls, mapping: dict) -> "RunConfig":
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in mapping.items():
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, raw)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        mapping = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            mapping[key] = value
        return cls.from_mapping(mapping)

    def to_file(self, path: str | Path) -> None:
        lines = [f"{k} = {v}" for k, v in sorted(asdict(self).items())]
        Path(path).write_text("\n".join(lines) + "\n")


_INT_KEYS = {"batch", "epochs", "seed", "latent_channels", "hidden_channels"}
_FLOAT_KEYS = {"alpha", "beta", "gamma", "lr", "split"}


def _coerce(key: str, raw):
    if not isinstance(raw, str):
        return raw
    if key in _INT_KEYS:
        return int(raw)
    if key in _FLOAT_KEYS:
        return parse_ratio(raw)
    return raw


def parse_ratio(text: str) -> float:
    """Parse a float that may be written as a fraction, e.g. '1/128'."""
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)

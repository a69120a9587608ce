"""Learned factorized density over quantized latents.

Each latent channel gets a logistic density with learned location and
scale; integer symbols are scored by the CDF difference over the unit
bin around them, which doubles as the continuous relaxation when the
latent carries additive uniform noise.  The same discretized pmf drives
the differentiable rate estimate and the range coder's frequency tables.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .bottleneck import CONTINUOUS, LatentCode
from .errors import ParameterDomainError

# Floor applied to probabilities before taking logs: caps any element's
# estimated cost at 32 bits and keeps the loss finite on outliers.
PMF_FLOOR = 2.0**-32

# Number of coder symbols besides the integer support: low and high escape.
N_ESCAPES = 2
CODER_TOTAL = 1 << 16


def _softplus_inverse(y: torch.Tensor) -> torch.Tensor:
    # log(expm1(y)), switched to the identity where expm1 would overflow
    return torch.where(y > 20.0, y, torch.log(torch.expm1(y.clamp(min=1e-12))))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _cdf_diff(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """sigmoid(b) - sigmoid(a) for b > a, evaluated on the better-conditioned
    side of the distribution (sigmoid(b) - sigmoid(a) == sigmoid(-a) - sigmoid(-b))."""
    flip = (a + b) > 0
    lo = torch.where(flip, -b, a)
    hi = torch.where(flip, -a, b)
    return torch.sigmoid(hi) - torch.sigmoid(lo)


class FactorizedEntropyModel(nn.Module):
    """Per-channel logistic density over latent symbols plus escape tails.

    Scale is parameterized through a softplus so it stays positive under
    unconstrained optimization.  Symbols outside ``support`` are handled
    by two escape tails whose mass completes the discretized pmf to 1.
    """

    def __init__(self, channels: int, support: tuple[int, int] = (-64, 63)):
        super().__init__()
        x_min, x_max = int(support[0]), int(support[1])
        if x_min >= x_max:
            raise ParameterDomainError(f"empty symbol support [{x_min}, {x_max}]")
        self.channels = channels
        self.support_min = x_min
        self.support_max = x_max
        self.loc = nn.Parameter(torch.zeros(channels))
        self.scale_param = nn.Parameter(
            torch.full((channels,), float(_softplus_inverse(torch.tensor(1.0))))
        )

    @classmethod
    def from_values(cls, loc, scale, support: tuple[int, int] = (-64, 63)):
        loc = torch.as_tensor(loc, dtype=torch.get_default_dtype()).reshape(-1)
        scale = torch.as_tensor(scale, dtype=torch.get_default_dtype()).reshape(-1)
        if scale.numel() != loc.numel():
            raise ParameterDomainError("loc and scale must have the same length")
        if not torch.isfinite(scale).all() or (scale <= 0).any():
            raise ParameterDomainError("scale must be finite and > 0")
        model = cls(loc.numel(), support)
        with torch.no_grad():
            model.loc.copy_(loc)
            model.scale_param.copy_(_softplus_inverse(scale))
        return model

    @property
    def scale(self) -> torch.Tensor:
        return F.softplus(self.scale_param).clamp(min=1e-9)

    def pmf(self, symbols, channel: int) -> torch.Tensor:
        """Probability of integer symbols under one channel's discretized
        density.  Computed in float64; differentiable w.r.t. loc and scale."""
        if not 0 <= channel < self.channels:
            raise IndexError(f"channel {channel} out of range [0, {self.channels})")
        x = torch.as_tensor(symbols, dtype=torch.float64)
        loc = self.loc[channel].double()
        scale = self.scale[channel].double()
        a = (x - 0.5 - loc) / scale
        b = (x + 0.5 - loc) / scale
        return _cdf_diff(a, b)

    def tail_masses(self, channel: int) -> tuple[torch.Tensor, torch.Tensor]:
        """Escape-tail probabilities below support_min and above support_max."""
        loc = self.loc[channel].double()
        scale = self.scale[channel].double()
        lower = torch.sigmoid((self.support_min - 0.5 - loc) / scale)
        upper = torch.sigmoid(-(self.support_max + 0.5 - loc) / scale)
        return lower, upper

    def likelihood(self, values: torch.Tensor) -> torch.Tensor:
        """Per-element bin probability for a (batch, C, h, w) latent tensor.

        For integer values this is the exact discretized pmf; for noisy
        values it is the matching continuous relaxation.
        """
        if values.shape[1] != self.channels:
            raise ParameterDomainError(
                f"latent has {values.shape[1]} channels, model has {self.channels}"
            )
        loc = self.loc.view(1, -1, 1, 1).to(values.dtype)
        scale = self.scale.view(1, -1, 1, 1).to(values.dtype)
        a = (values - 0.5 - loc) / scale
        b = (values + 0.5 - loc) / scale
        return _cdf_diff(a, b)

    def code_length_bits(self, latent: LatentCode) -> torch.Tensor:
        """Estimated code length of the latent in bits (sum over elements)."""
        if latent.state == CONTINUOUS:
            raise ValueError("rate is defined for noisy or quantized latents only")
        p = self.likelihood(latent.data).clamp(min=PMF_FLOOR)
        return -torch.log2(p).sum()

    def rate_loss(self, latent: LatentCode, image_height: int, image_width: int) -> torch.Tensor:
        """Bits per source-image pixel (not per latent element, not x3 for color)."""
        if image_height <= 0 or image_width <= 0:
            raise ValueError("image dims must be positive")
        batch = latent.data.shape[0]
        return self.code_length_bits(latent) / float(batch * image_height * image_width)

    def coder_tables(self) -> tuple[np.ndarray, np.ndarray]:
        """Quantize the pmf to 16-bit integer frequencies for the range coder.

        Returns (freq, cum): freq is (C, support+2) with the two escape
        symbols first/last, min count 1, rows summing to exactly 2**16;
        cum is the (C, support+3) cumulative table.
        """
        with torch.no_grad():
            loc = self.loc.detach().double().cpu().numpy()
            scale = self.scale.detach().double().cpu().numpy()
        xs = np.arange(self.support_min, self.support_max + 1, dtype=np.float64)
        a = (xs[None, :] - 0.5 - loc[:, None]) / scale[:, None]
        b = (xs[None, :] + 0.5 - loc[:, None]) / scale[:, None]
        pmf = _sigmoid_np(b) - _sigmoid_np(a)
        lower = _sigmoid_np((self.support_min - 0.5 - loc) / scale)
        upper = _sigmoid_np(-(self.support_max + 0.5 - loc) / scale)
        probs = np.concatenate([lower[:, None], pmf, upper[:, None]], axis=1)
        n_symbols = probs.shape[1]
        budget = CODER_TOTAL - n_symbols
        freq = np.floor(probs * budget).astype(np.int64) + 1
        leftover = CODER_TOTAL - freq.sum(axis=1)
        freq[np.arange(freq.shape[0]), probs.argmax(axis=1)] += leftover
        cum = np.zeros((freq.shape[0], n_symbols + 1), dtype=np.int64)
        np.cumsum(freq, axis=1, out=cum[:, 1:])
        return freq, cum

    def digest(self) -> bytes:
        """8-byte fingerprint of the entropy parameters (bitstream header field)."""
        h = hashlib.sha256()
        h.update(b"taskcodec-entropy-v1")
        h.update(int(self.support_min).to_bytes(4, "big", signed=True))
        h.update(int(self.support_max).to_bytes(4, "big", signed=True))
        h.update(self.loc.detach().cpu().to(torch.float32).numpy().tobytes())
        h.update(self.scale.detach().cpu().to(torch.float32).numpy().tobytes())
        return h.digest()[:8]

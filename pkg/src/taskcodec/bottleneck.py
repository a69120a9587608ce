"""Convolutional compress/decompress pair and the quantizer between them.

The encoder halves the spatial resolution twice (conv-ReLU-maxpool blocks),
so inputs must have height and width divisible by 4.  During training the
quantizer is relaxed to additive uniform noise; at inference latents are
rounded to integers (half away from zero) so they can be entropy coded.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import RejectedInputError, ShapeMismatchError

CONTINUOUS = "continuous"
NOISY = "noisy"
QUANTIZED = "quantized"

# 23-bit noise grid: offsets (k + 0.5) / 2**23 - 0.5 are exactly representable
# in float32 and lie strictly inside (-0.5, 0.5).
_NOISE_BITS = 23


@dataclass
class LatentCode:
    """Latent tensor tagged with its quantization state.

    ``data`` is (batch, channels, h, w).  ``state`` is one of
    ``"continuous"`` (raw encoder output), ``"noisy"`` (training-time
    uniform-noise relaxation) or ``"quantized"`` (integer symbols).
    """

    data: torch.Tensor
    state: str

    def __post_init__(self):
        if self.state not in (CONTINUOUS, NOISY, QUANTIZED):
            raise ValueError(f"unknown latent state {self.state!r}")
        if self.data.dim() != 4:
            raise ShapeMismatchError(
                f"latent must be 4D (batch, channels, h, w), got {tuple(self.data.shape)}"
            )
        if not torch.isfinite(self.data).all():
            raise ValueError("latent contains non-finite values")


def check_image(image: torch.Tensor) -> torch.Tensor:
    """Validate an image batch: 4D, finite, spatial dims divisible by 4."""
    if image.dim() == 3:
        image = image.unsqueeze(0)
    if image.dim() != 4:
        raise RejectedInputError(
            f"image must be (batch, channels, H, W), got {tuple(image.shape)}"
        )
    h, w = image.shape[-2:]
    if h % 4 != 0 or w % 4 != 0:
        raise RejectedInputError(
            f"image dims must be divisible by 4 (two 2x poolings), got {h}x{w}"
        )
    if not torch.isfinite(image).all():
        raise RejectedInputError("image contains non-finite values")
    return image


def round_half_away_from_zero(x: torch.Tensor) -> torch.Tensor:
    """Round to nearest integer, ties away from zero.

    Built from exact trunc/fraction arithmetic so it agrees with a scalar
    oracle even right next to half-integer boundaries (adding 0.5 and
    flooring would round across the boundary for values within one ulp
    of a .5 tie).
    """
    whole = torch.trunc(x)
    frac = x - whole  # exact for |x| < 2**(mantissa bits)
    bump = torch.where(frac.abs() >= 0.5, torch.sign(x), torch.zeros_like(x))
    return whole + bump


def uniform_noise_open(
    shape, generator: torch.Generator, dtype=torch.float32, device="cpu"
) -> torch.Tensor:
    """Uniform noise on the open interval (-0.5, 0.5).

    Sampled on a half-offset dyadic grid so no draw can land exactly on
    +/-0.5 after float rounding.
    """
    k = torch.randint(0, 1 << _NOISE_BITS, shape, generator=generator, device=device)
    return (k.to(dtype) + 0.5) * (2.0**-_NOISE_BITS) - 0.5


def quantize_train(latent: LatentCode, generator: torch.Generator) -> LatentCode:
    """Additive-noise relaxation of quantization (training path).

    Output = input + u with u ~ U(-0.5, 0.5) i.i.d.; the gradient w.r.t.
    the input is the identity.
    """
    if latent.state != CONTINUOUS:
        raise ValueError(f"quantize_train expects a continuous latent, got {latent.state}")
    u = uniform_noise_open(
        latent.data.shape, generator, dtype=latent.data.dtype, device=latent.data.device
    )
    return LatentCode(latent.data + u, NOISY)


def quantize_eval(latent: LatentCode) -> LatentCode:
    """Deterministic rounding to integer symbols (inference path)."""
    if latent.state != CONTINUOUS:
        raise ValueError(f"quantize_eval expects a continuous latent, got {latent.state}")
    return LatentCode(round_half_away_from_zero(latent.data), QUANTIZED)


class Bottleneck(nn.Module):
    """Fully convolutional encoder/decoder with a 4x spatial reduction.

    Encoder: two conv(3x3, stride 1) - ReLU - maxpool(2x2) blocks.
    Decoder: two 2x up-convolutions with ReLUs plus a final stride-1
    convolution back to image channels (three stages, 4x total upsampling).
    """

    def __init__(self, latent_channels: int = 8, hidden_channels: int = 32,
                 image_channels: int = 3):
        super().__init__()
        self.latent_channels = latent_channels
        self.hidden_channels = hidden_channels
        self.image_channels = image_channels
        self.encoder = nn.Sequential(
            nn.Conv2d(image_channels, hidden_channels, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(hidden_channels, latent_channels, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
        )
        self.decoder = nn.Sequential(
            nn.ConvTranspose2d(latent_channels, hidden_channels, 4, stride=2, padding=1),
            nn.ReLU(),
            nn.ConvTranspose2d(hidden_channels, hidden_channels, 4, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(hidden_channels, image_channels, 3, padding=1),
        )

    def encode(self, image: torch.Tensor) -> LatentCode:
        image = check_image(image)
        if image.shape[1] != self.image_channels:
            raise RejectedInputError(
                f"expected {self.image_channels} channels, got {image.shape[1]}"
            )
        return LatentCode(self.encoder(image), CONTINUOUS)

    def decode(self, latent: LatentCode) -> torch.Tensor:
        data = latent.data
        if data.shape[1] != self.latent_channels:
            raise ShapeMismatchError(
                f"latent has {data.shape[1]} channels, decoder expects {self.latent_channels}"
            )
        return self.decoder(data)

    def forward(self, image: torch.Tensor, mode: str = "train",
                generator: torch.Generator | None = None):
        """Run encode -> quantize -> decode.

        Returns ``(reconstruction, latent_used)`` where ``latent_used`` is
        the noisy (train) or integer (eval) latent, for rate computation.
        Eval reconstructions are clamped to [0, 1]; training ones are left
        unclamped so gradients stay clean.
        """
        latent = self.encode(image)
        if mode == "train":
            if generator is None:
                raise ValueError("train mode needs a seeded torch.Generator")
            used = quantize_train(latent, generator)
            recon = self.decode(used)
        elif mode == "eval":
            used = quantize_eval(latent)
            recon = self.decode(used).clamp(0.0, 1.0)
        else:
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        return recon, used

"""Self-describing compressed-latent container and its codec.

Wire format (big-endian):
  magic "TCTC" (4 bytes), version u8, C u16, h u16, w u16,
  [version 2 only: true image height u16, true image width u16,]
  entropy-parameter digest (8 bytes), payload length u32, payload.

Version 1 is the base format; version 2 adds the true (pre-padding)
image dims so the CLI can crop reconstructions of images whose sides
were not divisible by 4.  The payload range-codes every latent symbol
under its channel's quantized pmf; symbols outside the model support
are escape-coded as a tail symbol followed by a raw 32-bit offset.
"""

from __future__ import annotations

import bisect
import struct
from dataclasses import dataclass

import numpy as np
import torch

from .bottleneck import QUANTIZED, LatentCode
from .entropy import CODER_TOTAL, FactorizedEntropyModel
from .errors import DecodeError, EncodeError, WrongModelError
from .rangecoder import RangeDecoder, RangeEncoder

MAGIC = b"TCTC"
VERSION_BASE = 1
VERSION_PADDED = 2

_MAX_ESCAPE_OFFSET = 1 << 32


@dataclass
class Bitstream:
    channels: int
    latent_height: int
    latent_width: int
    digest: bytes
    payload: bytes
    true_size: tuple[int, int] | None = None

    @property
    def version(self) -> int:
        return VERSION_BASE if self.true_size is None else VERSION_PADDED

    def header_bytes(self) -> bytes:
        head = MAGIC + struct.pack(
            ">BHHH", self.version, self.channels, self.latent_height, self.latent_width
        )
        if self.true_size is not None:
            head += struct.pack(">HH", *self.true_size)
        head += self.digest + struct.pack(">I", len(self.payload))
        return head

    def to_bytes(self) -> bytes:
        return self.header_bytes() + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        if len(data) < 4 or data[:4] != MAGIC:
            raise DecodeError("bad magic bytes (not a compressed-latent file)")
        if len(data) < 11:
            raise DecodeError("header truncated")
        version, channels, h, w = struct.unpack(">BHHH", data[4:11])
        pos = 11
        true_size = None
        if version == VERSION_PADDED:
            if len(data) < pos + 4:
                raise DecodeError("header truncated")
            true_size = struct.unpack(">HH", data[pos:pos + 4])
            pos += 4
        elif version != VERSION_BASE:
            raise DecodeError(f"unsupported format version {version}")
        if len(data) < pos + 12:
            raise DecodeError("header truncated")
        digest = data[pos:pos + 8]
        (payload_len,) = struct.unpack(">I", data[pos + 8:pos + 12])
        payload = data[pos + 12:]
        if len(payload) != payload_len:
            raise DecodeError(
                f"declared payload length {payload_len} but found {len(payload)} bytes"
            )
        return cls(channels, h, w, digest, payload, true_size)


def encode_stream(
    latent: LatentCode,
    model: FactorizedEntropyModel,
    true_size: tuple[int, int] | None = None,
) -> Bitstream:
    """Range-code one quantized latent into a Bitstream."""
    if latent.state != QUANTIZED:
        raise EncodeError(f"can only encode quantized latents, got state {latent.state!r}")
    data = latent.data
    if data.dim() == 4:
        if data.shape[0] != 1:
            raise EncodeError("encode_stream takes one image at a time")
        data = data[0]
    symbols = data.detach().cpu().numpy().astype(np.int64)
    channels, h, w = symbols.shape
    if channels != model.channels:
        raise EncodeError(f"latent channels {channels} != model channels {model.channels}")

    x_min, x_max = model.support_min, model.support_max
    esc_high = x_max - x_min + 2  # symbol index of the upper tail
    freq, cum = model.coder_tables()
    enc = RangeEncoder()
    for c in range(channels):
        f_row = freq[c].tolist()
        c_row = cum[c].tolist()
        for v in symbols[c].ravel().tolist():
            if v < x_min:
                offset = x_min - 1 - v
                if offset >= _MAX_ESCAPE_OFFSET:
                    raise EncodeError(f"symbol {v} beyond escape range")
                enc.encode(c_row[0], f_row[0], CODER_TOTAL)
                enc.encode_raw16(offset >> 16)
                enc.encode_raw16(offset & 0xFFFF)
            elif v > x_max:
                offset = v - x_max - 1
                if offset >= _MAX_ESCAPE_OFFSET:
                    raise EncodeError(f"symbol {v} beyond escape range")
                enc.encode(c_row[esc_high], f_row[esc_high], CODER_TOTAL)
                enc.encode_raw16(offset >> 16)
                enc.encode_raw16(offset & 0xFFFF)
            else:
                s = v - x_min + 1
                enc.encode(c_row[s], f_row[s], CODER_TOTAL)
    return Bitstream(channels, h, w, model.digest(), enc.finish(), true_size)


def decode_stream(stream: Bitstream, model: FactorizedEntropyModel) -> LatentCode:
    """Decode a Bitstream back to the exact integer latent."""
    if stream.digest != model.digest():
        raise WrongModelError(
            "bitstream was produced under different entropy parameters"
        )
    if stream.channels != model.channels:
        raise DecodeError(
            f"stream declares {stream.channels} channels, model has {model.channels}"
        )
    x_min, x_max = model.support_min, model.support_max
    esc_high = x_max - x_min + 2
    freq, cum = model.coder_tables()
    dec = RangeDecoder(stream.payload)
    out = np.empty((stream.channels, stream.latent_height, stream.latent_width),
                   dtype=np.int64)
    n_per_channel = stream.latent_height * stream.latent_width
    for c in range(stream.channels):
        f_row = freq[c].tolist()
        c_row = cum[c].tolist()
        flat = out[c].reshape(-1)
        for i in range(n_per_channel):
            target = dec.decode_target(CODER_TOTAL)
            s = bisect.bisect_right(c_row, target) - 1
            dec.decode_update(c_row[s], f_row[s])
            if s == 0:
                offset = (dec.decode_raw16() << 16) | dec.decode_raw16()
                flat[i] = x_min - 1 - offset
            elif s == esc_high:
                offset = (dec.decode_raw16() << 16) | dec.decode_raw16()
                flat[i] = x_max + 1 + offset
            else:
                flat[i] = s - 1 + x_min
    values = torch.from_numpy(out.astype(np.float32)).unsqueeze(0)
    return LatentCode(values, QUANTIZED)


def measured_bpp(stream: Bitstream, image_height: int, image_width: int) -> float:
    """Whole-file (header + payload) bits per source-image pixel."""
    return len(stream.to_bytes()) * 8.0 / float(image_height * image_width)


def payload_bpp(stream: Bitstream, image_height: int, image_width: int) -> float:
    """Payload-only bits per source-image pixel."""
    return len(stream.payload) * 8.0 / float(image_height * image_width)

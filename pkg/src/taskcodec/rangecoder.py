"""Byte renormalizing range coder (32-bit state, 16-bit frequency totals).

Carry propagation is handled with the cache/pending-0xFF scheme: a byte is
only emitted once no future carry can change it.  Frequencies are plain
integer counts; the encoder codes the interval [cum_low, cum_low + freq)
out of [0, total) with total <= 2**16.
"""

from __future__ import annotations

from .errors import DecodeError, EncodeError

MAX_TOTAL = 1 << 16
_TOP = 1 << 24
_MASK32 = (1 << 32) - 1


class RangeEncoder:
    def __init__(self):
        self._low = 0
        self._range = _MASK32
        self._cache = 0
        self._cache_size = 1
        self._out = bytearray()

    def encode(self, cum_low: int, freq: int, total: int) -> None:
        if not (0 < freq and 0 <= cum_low and cum_low + freq <= total <= MAX_TOTAL):
            raise EncodeError(
                f"bad interval cum_low={cum_low} freq={freq} total={total}"
            )
        r = self._range // total
        self._low += cum_low * r
        self._range = freq * r
        while self._range < _TOP:
            self._shift_low()
            self._range <<= 8

    def encode_raw16(self, value: int) -> None:
        """Code a 16-bit value at exactly 16 bits (uniform distribution)."""
        self.encode(value, 1, MAX_TOTAL)

    def _shift_low(self) -> None:
        low = self._low
        if low < 0xFF000000 or low > _MASK32:
            carry = low >> 32
            self._out.append((self._cache + carry) & 0xFF)
            if self._cache_size > 1:
                self._out.extend(bytes([(0xFF + carry) & 0xFF]) * (self._cache_size - 1))
            self._cache = (low >> 24) & 0xFF
            self._cache_size = 0
        self._cache_size += 1
        self._low = (low << 8) & _MASK32

    def finish(self) -> bytes:
        # No further carries can occur: drain the cache, the pending 0xFF
        # run and the full 32-bit low window.
        carry = self._low >> 32
        self._out.append((self._cache + carry) & 0xFF)
        if self._cache_size > 1:
            self._out.extend(bytes([(0xFF + carry) & 0xFF]) * (self._cache_size - 1))
        self._out += (self._low & _MASK32).to_bytes(4, "big")
        return bytes(self._out)


class RangeDecoder:
    def __init__(self, data: bytes):
        if len(data) < 5:
            raise DecodeError(f"payload too short ({len(data)} bytes)")
        self._data = data
        # Byte 0 is the encoder's flushed initial cache; the code window
        # starts at byte 1.
        self._code = int.from_bytes(data[1:5], "big")
        self._pos = 5
        self._range = _MASK32
        self._r = 0

    def decode_target(self, total: int) -> int:
        """Return the cumulative-frequency threshold of the next symbol."""
        self._r = self._range // total
        v = self._code // self._r
        return min(v, total - 1)

    def decode_update(self, cum_low: int, freq: int) -> None:
        self._code -= cum_low * self._r
        self._range = freq * self._r
        while self._range < _TOP:
            self._code = (self._code << 8) | self._next_byte()
            self._range <<= 8

    def decode_raw16(self) -> int:
        value = self.decode_target(MAX_TOTAL)
        self.decode_update(value, 1)
        return value

    def _next_byte(self) -> int:
        if self._pos >= len(self._data):
            raise DecodeError("payload exhausted mid-decode (truncated stream)")
        b = self._data[self._pos]
        self._pos += 1
        return b

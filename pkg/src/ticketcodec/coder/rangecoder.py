"""Byte-oriented range coder with carry propagation.

The encoder keeps a 32-bit ``range`` and a 33-bit ``low``; bytes that may
still receive a carry are held back (``cache`` plus a run of pending 0xFF
bytes). Frequencies are quantized to a total of ``2**PRECISION``.

Two details keep the stream short: the first byte produced by this scheme is
always zero and is not stored, and the flush emits only the bytes needed to
pin a value inside the final interval. The decoder reads zeros past the end
of its buffer, so trailing zero bytes are dropped too.
"""

from __future__ import annotations

from bisect import bisect_right
from typing import Callable, Iterable, Sequence

from .cdf import PRECISION, QuantizedCdf

TOP = 1 << 24
MASK32 = 0xFFFFFFFF


class RangeDecodeError(ValueError):
    """The byte stream is not a valid range-coded sequence."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = MASK32
        self.cache = 0
        self.pending = 0  # 0xFF bytes waiting behind the cache byte
        self.started = False
        self.out = bytearray()
        self._finished = False

    def _emit(self, byte: int):
        if self.started:
            self.out.append(byte & 0xFF)
        else:
            if byte != 0:
                raise AssertionError("leading range-coder byte must be zero")
            self.started = True

    def _shift_low(self):
        if self.low < 0xFF000000 or self.low > MASK32:
            carry = self.low >> 32
            self._emit(self.cache + carry)
            for _ in range(self.pending):
                self._emit(0xFF + carry)
            self.pending = 0
            self.cache = (self.low >> 24) & 0xFF
        else:
            self.pending += 1
        self.low = (self.low << 8) & MASK32

    def encode(self, cum_low: int, freq: int):
        """Narrow the interval to ``[cum_low, cum_low + freq)`` out of ``2**PRECISION``."""
        if freq <= 0:
            raise ValueError("cannot encode a zero-frequency symbol")
        r = self.range >> PRECISION
        self.low += r * cum_low
        self.range = r * freq
        while self.range < TOP:
            self.range <<= 8
            self._shift_low()

    def encode_symbol(self, cdf: QuantizedCdf, symbol: int):
        i = symbol - cdf.lo
        if not 0 <= i < cdf.n_symbols:
            raise ValueError(f"symbol {symbol} outside CDF range [{cdf.lo}, {cdf.hi}]")
        self.encode(cdf.cum[i], cdf.cum[i + 1] - cdf.cum[i])

    def encode_bit(self, bit: int, count_one: int):
        """Binary symbol with ``P(1) = count_one / 2**PRECISION``."""
        if bit:
            self.encode(0, count_one)
        else:
            self.encode(count_one, (1 << PRECISION) - count_one)

    def finish(self) -> bytes:
        if self._finished:
            return bytes(self.out)
        # Round low up to a multiple of TOP; range >= TOP guarantees it stays inside.
        self.low = (self.low + TOP - 1) & ~(TOP - 1)
        self._shift_low()
        self._shift_low()
        self._finished = True
        out = bytes(self.out).rstrip(b"\x00")
        self.out = bytearray(out)
        return out


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = bytes(data)
        self.pos = 0
        self.range = MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next()

    def _next(self) -> int:
        if self.pos < len(self.data):
            b = self.data[self.pos]
        else:
            b = 0
        self.pos += 1
        return b

    def _target(self) -> int:
        self._r = self.range >> PRECISION
        v = self.code // self._r
        if v >= (1 << PRECISION):
            raise RangeDecodeError("code value outside the coded interval", min(self.pos, len(self.data)))
        return v

    def _consume(self, cum_low: int, freq: int):
        self.code -= self._r * cum_low
        self.range = self._r * freq
        while self.range < TOP:
            self.code = ((self.code << 8) | self._next()) & MASK32
            self.range <<= 8

    def decode_symbol(self, cdf: QuantizedCdf) -> int:
        v = self._target()
        i = bisect_right(cdf.cum, v) - 1
        if not 0 <= i < cdf.n_symbols:
            raise RangeDecodeError("decoded value matches no symbol", min(self.pos, len(self.data)))
        self._consume(cdf.cum[i], cdf.cum[i + 1] - cdf.cum[i])
        return cdf.lo + i

    def decode_bit(self, count_one: int) -> int:
        v = self._target()
        if v < count_one:
            self._consume(0, count_one)
            return 1
        self._consume(count_one, (1 << PRECISION) - count_one)
        return 0


CdfProvider = Callable[[int, Sequence[int]], QuantizedCdf]


def range_encode(symbols: Iterable[int], cdf_provider: CdfProvider) -> bytes:
    """Encode ``symbols``; ``cdf_provider(i, history)`` gives the CDF of symbol ``i``."""
    enc = RangeEncoder()
    history: list[int] = []
    for i, s in enumerate(symbols):
        enc.encode_symbol(cdf_provider(i, history), int(s))
        history.append(int(s))
    return enc.finish()


def range_decode(data: bytes, n_symbols: int, cdf_provider: CdfProvider) -> list[int]:
    dec = RangeDecoder(data)
    history: list[int] = []
    for i in range(n_symbols):
        history.append(dec.decode_symbol(cdf_provider(i, history)))
    return history

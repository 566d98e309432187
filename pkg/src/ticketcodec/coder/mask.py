"""Lossless mask coding under a static Bernoulli model."""

from __future__ import annotations

import math

import numpy as np

from .cdf import TOTAL, bernoulli_count
from .rangecoder import RangeDecoder, RangeEncoder


def mask_bits_model(n: int, k: int) -> float:
    """``-log2 p(mask)`` with ``p = k / n`` (``N * H2(p)``)."""
    if n == 0 or k in (0, n):
        return 0.0
    p = k / n
    return -(k * math.log2(p) + (n - k) * math.log2(1.0 - p))


def encode_mask(mask_bits, k_active: int) -> bytes:
    """Range-code a flat 0/1 sequence in order with ``P(1) = k_active / N``."""
    bits = np.asarray(mask_bits, dtype=bool).ravel()
    n = bits.size
    if int(bits.sum()) != k_active:
        raise ValueError(f"mask has {int(bits.sum())} ones, header says {k_active}")
    count_one = bernoulli_count(k_active / n) if n else TOTAL // 2
    enc = RangeEncoder()
    for b in bits.tolist():
        enc.encode_bit(b, count_one)
    return enc.finish()


def decode_mask(data: bytes, n: int, k_active: int) -> np.ndarray:
    count_one = bernoulli_count(k_active / n) if n else TOTAL // 2
    dec = RangeDecoder(data)
    out = np.fromiter((dec.decode_bit(count_one) for _ in range(n)), dtype=bool, count=n)
    return out


def mask_bits_coded_model(n: int, k: int) -> float:
    """Ideal bits under the clamped 16-bit probability the coder actually uses."""
    if n == 0:
        return 0.0
    c1 = bernoulli_count(k / n)
    return -(k * math.log2(c1 / TOTAL) + (n - k) * math.log2((TOTAL - c1) / TOTAL))


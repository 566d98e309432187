"""Integer cumulative frequency tables for the range coder."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PRECISION = 16
TOTAL = 1 << PRECISION


@dataclass(frozen=True)
class QuantizedCdf:
    """Symbols ``lo..hi`` with cumulative counts ``cum`` (length n + 1, total ``TOTAL``)."""

    lo: int
    cum: tuple

    @property
    def n_symbols(self) -> int:
        return len(self.cum) - 1

    @property
    def hi(self) -> int:
        return self.lo + self.n_symbols - 1

    def count(self, symbol: int) -> int:
        i = symbol - self.lo
        return self.cum[i + 1] - self.cum[i]

    def bits(self, symbol: int) -> float:
        return PRECISION - math.log2(self.count(symbol))

    def is_valid(self) -> bool:
        c = self.cum
        return c[0] == 0 and c[-1] == TOTAL and all(a < b for a, b in zip(c, c[1:]))


def cdf_from_pmf(pmf, lo: int) -> QuantizedCdf:
    """Scale a non-negative weight vector to integer counts summing to ``TOTAL``.

    Every count is at least 1. Rounding surplus or deficit is settled on the
    largest bins (largest first), never pushing a count below 1.
    """
    p = np.asarray(pmf, dtype=np.float64)
    n = p.size
    if n == 0:
        raise ValueError("empty symbol range")
    if n > TOTAL:
        raise ValueError(f"alphabet of {n} symbols exceeds the {TOTAL} frequency budget")
    s = p.sum()
    if not (s > 0 and math.isfinite(s)):
        p = np.ones(n)
        s = float(n)
    counts = np.maximum(1, np.floor(p / s * TOTAL + 0.5)).astype(np.int64)
    diff = TOTAL - int(counts.sum())
    if diff:
        order = np.argsort(-counts, kind="stable")
        if diff > 0:
            counts[order[0]] += diff
        else:
            deficit = -diff
            for i in order:
                take = min(deficit, int(counts[i]) - 1)
                counts[i] -= take
                deficit -= take
                if deficit == 0:
                    break
    cum = np.concatenate([[0], np.cumsum(counts)])
    return QuantizedCdf(lo, tuple(int(c) for c in cum))


def quantize_cdf(mu: float, b: float, lo: int, hi: int) -> QuantizedCdf:
    """Quantized integrated-Laplace table over the integers ``lo..hi``."""
    from ..arm import laplace_integer_pmf

    if lo > hi:
        raise ValueError(f"empty range [{lo}, {hi}]")
    if lo == hi:
        return QuantizedCdf(lo, (0, TOTAL))
    k = np.arange(lo, hi + 1, dtype=np.float64)
    return cdf_from_pmf(laplace_integer_pmf(k, mu, b), lo)


def uniform_cdf(n: int, lo: int = 0) -> QuantizedCdf:
    return cdf_from_pmf(np.ones(n), lo)


def bernoulli_count(p_one: float) -> int:
    """Count for symbol 1 with ``p`` clamped to ``[1/TOTAL, 1 - 1/TOTAL]``."""
    return min(max(int(math.floor(p_one * TOTAL + 0.5)), 1), TOTAL - 1)

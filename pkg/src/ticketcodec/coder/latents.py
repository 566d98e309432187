"""Sequential entropy coding of the integer latent pyramid.

Levels are coded finest first, raster order within a level. Each symbol's
table comes from :func:`ticketcodec.arm.arm_eval` on the already coded
neighbours, so encoder and decoder go through the same float64 arithmetic.
"""

from __future__ import annotations

import numpy as np

from ..arm import arm_eval
from .cdf import QuantizedCdf, quantize_cdf
from .rangecoder import RangeDecoder, RangeEncoder

INT16_MIN, INT16_MAX = -(2 ** 15), 2 ** 15 - 1


def latent_bounds(latents) -> tuple[tuple, tuple]:
    lo, hi = [], []
    for z in latents:
        lo.append(int(z.min()) if z.size else 0)
        hi.append(int(z.max()) if z.size else 0)
    if min(lo) < INT16_MIN or max(hi) > INT16_MAX:
        raise OverflowError("latent values exceed the int16 header range")
    return tuple(lo), tuple(hi)


def _level_tables(grid, psi64, template, lo, hi):
    """Yield ``(y, x, cdf)`` in raster order reading contexts from ``grid``.

    ``grid`` may be filled in while iterating (decoder side).
    """
    h, w = grid.shape
    c = len(template)
    ctx = np.zeros(c, dtype=np.float64)
    for y in range(h):
        row_ctx = [(k, y + dy, dx) for k, (dy, dx) in enumerate(template)]
        for x in range(w):
            if lo == hi:
                yield y, x, QuantizedCdf(lo, (0, 1 << 16))
                continue
            ctx[:] = 0.0
            for k, yy, dx in row_ctx:
                xx = x + dx
                if 0 <= yy < h and 0 <= xx < w:
                    ctx[k] = grid[yy][xx]
            mu, b = arm_eval(ctx, psi64)
            yield y, x, quantize_cdf(mu, b, lo, hi)


def iter_latent_tables(latents, psi64, template, lo, hi):
    """All coding tables for known latents, in coding order (level, raster)."""
    for level, z in enumerate(latents):
        grid = _ListGrid(np.asarray(z, dtype=np.int64).tolist(), z.shape)
        for y, x, cdf in _level_tables(grid, psi64, template, lo[level], hi[level]):
            yield level, y, x, cdf


class _ListGrid:
    """Nested-list grid with a numpy-like ``shape`` (fast scalar indexing)."""

    def __init__(self, rows, shape):
        self.rows = rows
        self.shape = shape

    def __getitem__(self, y):
        return self.rows[y]


def encode_latents(latents, psi64, template, lo, hi) -> bytes:
    enc = RangeEncoder()
    for level, y, x, cdf in iter_latent_tables(latents, psi64, template, lo, hi):
        enc.encode_symbol(cdf, int(latents[level][y, x]))
    return enc.finish()


def decode_latents(data: bytes, shapes, psi64, template, lo, hi) -> list[np.ndarray]:
    dec = RangeDecoder(data)
    out = []
    for level, (h, w) in enumerate(shapes):
        rows = [[0] * w for _ in range(h)]
        grid = _ListGrid(rows, (h, w))
        for y, x, cdf in _level_tables(grid, psi64, template, lo[level], hi[level]):
            rows[y][x] = dec.decode_symbol(cdf)
        out.append(np.array(rows, dtype=np.int64).reshape(h, w))
    return out


def latent_bits_quantized(latents, psi64, template, lo, hi) -> list[float]:
    """Ideal bits per level under the quantized tables the coder uses."""
    bits = [0.0] * len(latents)
    for level, y, x, cdf in iter_latent_tables(latents, psi64, template, lo, hi):
        bits[level] += cdf.bits(int(latents[level][y, x]))
    return bits

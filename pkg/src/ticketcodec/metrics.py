"""Distortion and rate-distortion curve metrics."""

from __future__ import annotations

import math

import numpy as np

PSNR_CAP = 99.0


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr_from_mse(m: float) -> float:
    if m <= 0.0:
        return PSNR_CAP
    return min(-10.0 * math.log10(m), PSNR_CAP)


def psnr(a, b) -> float:
    """PSNR in dB for images in ``[0, 1]`` (peak 1); zero error is capped at 99 dB."""
    return psnr_from_mse(mse(a, b))


def quantize_8bit(x) -> np.ndarray:
    """Round ``[0, 1]`` values to 8-bit levels, half away from zero."""
    v = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(v + 0.5).astype(np.uint8)


def _prepare_curve(curve):
    pts = sorted((float(r), float(p)) for r, p in curve)
    if len(pts) < 4:
        raise ValueError("BD-rate needs at least 4 points per curve")
    rate = np.array([r for r, _ in pts])
    dist = np.array([p for _, p in pts])
    order = np.argsort(dist, kind="stable")
    rate, dist = rate[order], dist[order]
    if np.any(np.diff(dist) <= 0):
        raise ValueError("PSNR values must be strictly increasing along the curve")
    if np.any(rate <= 0):
        raise ValueError("rates must be positive")
    return np.log(rate), dist


def _integrate_cubic(p, lo, hi):
    antider = np.polyint(p)
    return np.polyval(antider, hi) - np.polyval(antider, lo)


def bd_rate(curve_a, curve_b, method: str = "cubic") -> float:
    """Bjontegaard delta rate of ``curve_b`` against ``curve_a`` in percent.

    Curves are iterables of ``(bpp, psnr)``. ``method="cubic"`` fits a
    third-order polynomial of log-rate against PSNR; ``"pchip"`` integrates a
    shape-preserving piecewise cubic instead.
    """
    la, da = _prepare_curve(curve_a)
    lb, db = _prepare_curve(curve_b)
    lo = max(da.min(), db.min())
    hi = min(da.max(), db.max())
    if not hi > lo:
        raise ValueError("PSNR ranges of the two curves do not overlap")
    if method == "cubic":
        ia = _integrate_cubic(np.polyfit(da, la, 3), lo, hi)
        ib = _integrate_cubic(np.polyfit(db, lb, 3), lo, hi)
    elif method == "pchip":
        from scipy.interpolate import PchipInterpolator

        ia = PchipInterpolator(da, la).integrate(lo, hi)
        ib = PchipInterpolator(db, lb).integrate(lo, hi)
    else:
        raise ValueError(f"unknown BD-rate method {method!r}")
    avg = (ib - ia) / (hi - lo)
    return float((math.exp(avg) - 1.0) * 100.0)

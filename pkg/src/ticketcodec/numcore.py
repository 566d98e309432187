"""Deterministic numeric substrate shared by every differentiable module.

Arrays laid out as ``(channels, height, width)`` (channel-major, row-major
within a channel) are used throughout as pixel grids; no wrapper type is
introduced for them.
"""

from __future__ import annotations

import hashlib
import math
from typing import Callable

import numpy as np
from scipy.special import erf

SQRT_HALF = 1.0 / math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class UnstableConfigurationError(FloatingPointError):
    """A loss or gradient evaluation produced a non-finite value."""


def derive_stream(seed: int, label: str) -> np.random.Generator:
    """Return a generator whose sample sequence depends only on ``(seed, label)``.

    The Philox key is a keyed BLAKE2b digest of the label with the seed as key,
    so substreams with different labels are independent and need no
    sequential coupling.
    """
    if not label:
        raise ValueError("stream label must be non-empty")
    key = hashlib.blake2b(
        label.encode("utf-8"),
        digest_size=16,
        key=int(seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little"),
    ).digest()
    words = np.frombuffer(key, dtype="<u8")
    return np.random.Generator(np.random.Philox(key=words))


def gelu(x):
    """Exact-erf GELU, ``x * Phi(x)``."""
    x = np.asarray(x)
    return 0.5 * x * (1.0 + erf(x * SQRT_HALF))


def gelu_grad(x):
    x = np.asarray(x)
    cdf = 0.5 * (1.0 + erf(x * SQRT_HALF))
    pdf = INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return cdf + x * pdf


def gelu_with_grad(x):
    """Return ``(gelu(x), gelu'(x))`` sharing the erf evaluation."""
    x = np.asarray(x)
    cdf = 0.5 * (1.0 + erf(x * SQRT_HALF))
    pdf = INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return x * cdf, cdf + x * pdf


def finite_diff_check(
    loss_fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    params: np.ndarray,
    epsilon: float = 1e-5,
    n_samples: int | None = 64,
    seed: int = 0,
    floor: float = 1e-8,
) -> float:
    """Compare an analytic gradient with central differences.

    ``loss_fn(p)`` must return ``(loss, grad)`` for a flat float64 vector ``p``.
    Returns the maximum over the checked coordinates of
    ``|analytic - numeric| / max(|analytic|, floor)``. When ``n_samples`` is
    None every coordinate is checked.
    """
    if not 1e-6 <= epsilon <= 1e-2:
        raise ValueError(f"epsilon {epsilon} outside [1e-6, 1e-2]")
    p0 = np.array(params, dtype=np.float64).ravel()
    loss0, grad = loss_fn(p0.copy())
    if not np.isfinite(loss0):
        raise UnstableConfigurationError(f"non-finite loss {loss0} at the base point")
    grad = np.asarray(grad, dtype=np.float64).ravel()
    if grad.shape != p0.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match params {p0.shape}")

    if n_samples is None or n_samples >= p0.size:
        coords = np.arange(p0.size)
    else:
        coords = derive_stream(seed, "finite_diff/coords").choice(p0.size, n_samples, replace=False)

    worst = 0.0
    for i in coords:
        p = p0.copy()
        p[i] = p0[i] + epsilon
        up, _ = loss_fn(p)
        p[i] = p0[i] - epsilon
        down, _ = loss_fn(p)
        if not (np.isfinite(up) and np.isfinite(down)):
            raise UnstableConfigurationError(f"non-finite loss while perturbing coordinate {i}")
        numeric = (up - down) / (2.0 * epsilon)
        err = abs(grad[i] - numeric) / max(abs(grad[i]), floor)
        worst = max(worst, err)
    return float(worst)

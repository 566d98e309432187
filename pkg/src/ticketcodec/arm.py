"""Auto-regressive Laplace entropy model over the latent pyramid.

Every latent is modelled by an integrated Laplace distribution whose mean and
scale come from a 3-layer MLP applied to a fixed causal neighbourhood in the
same pyramid level. Two evaluation routes exist: a batched one used for
training (any dtype, with gradients) and a per-element float64 one shared by
the entropy encoder and decoder so that both see identical probabilities.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .numcore import UnstableConfigurationError, derive_stream, gelu_with_grad

LOG_SCALE_SHIFT = 4.0
SCALE_MIN = 1e-2
SCALE_MAX = 150.0
LN2 = math.log(2.0)


def context_template(c: int) -> list[tuple[int, int]]:
    """First ``c`` causal offsets ordered by ``(dy^2 + dx^2, -dy, -dx)``.

    Candidates have ``dy in [-R, 0]`` and ``dx in [-R, R]`` with ``R = 3``,
    widened only when ``c`` exceeds the 24 offsets that radius provides.
    """
    if c < 1:
        raise ValueError(f"context size must be positive, got {c}")
    radius = 3
    while True:
        cands = [
            (dy, dx)
            for dy in range(-radius, 1)
            for dx in range(-radius, radius + 1)
            if dy < 0 or dx < 0
        ]
        if len(cands) >= c:
            break
        radius += 1
    cands.sort(key=lambda o: (o[0] ** 2 + o[1] ** 2, -o[0], -o[1]))
    return cands[:c]


def extract_context(grid, pos, template) -> np.ndarray:
    """Context vector at ``pos = (y, x)``; zero where an offset leaves the grid."""
    grid = np.asarray(grid)
    h, w = grid.shape
    y, x = pos
    if not (0 <= y < h and 0 <= x < w):
        raise IndexError(f"position {pos} outside grid {grid.shape}")
    out = np.zeros(len(template), dtype=np.float64)
    for k, (dy, dx) in enumerate(template):
        yy, xx = y + dy, x + dx
        if 0 <= yy < h and 0 <= xx < w:
            out[k] = grid[yy, xx]
    return out


def _pad_width(template) -> int:
    return max(max(-dy, abs(dx)) for dy, dx in template)


def gather_contexts(grid: np.ndarray, template) -> np.ndarray:
    """All contexts of a grid as an ``(h*w, c)`` matrix (raster order)."""
    h, w = grid.shape
    r = _pad_width(template)
    padded = np.zeros((h + r, w + 2 * r), dtype=grid.dtype)
    padded[r:, r:r + w] = grid
    cols = [padded[r + dy:r + dy + h, r + dx:r + dx + w].reshape(-1) for dy, dx in template]
    return np.stack(cols, axis=1)


def scatter_contexts(d_ctx: np.ndarray, shape, template) -> np.ndarray:
    """Adjoint of :func:`gather_contexts`."""
    h, w = shape
    r = _pad_width(template)
    padded = np.zeros((h + r, w + 2 * r), dtype=d_ctx.dtype)
    for k, (dy, dx) in enumerate(template):
        padded[r + dy:r + dy + h, r + dx:r + dx + w] += d_ctx[:, k].reshape(h, w)
    return padded[r:, r:r + w]


def init_arm(c: int, seed: int, dtype=np.float32) -> dict:
    """Uniform(+-1/sqrt(fan_in)) hidden layers; zero output layer."""
    rng = derive_stream(seed, "arm/init")
    bound = 1.0 / math.sqrt(c)

    def uni(shape):
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    return {
        "w1": uni((c, c)), "b1": uni((c,)),
        "w2": uni((c, c)), "b2": uni((c,)),
        "w3": np.zeros((2, c), dtype=dtype), "b3": np.zeros((2,), dtype=dtype),
    }


def raw_to_scale(raw):
    """Return ``(scale, dscale/draw)`` for the shifted-exp, clipped Laplace scale."""
    s = np.exp(raw - LOG_SCALE_SHIFT)
    inside = (s >= SCALE_MIN) & (s <= SCALE_MAX)
    return np.clip(s, SCALE_MIN, SCALE_MAX), np.where(inside, s, 0.0)


def arm_forward(ctx: np.ndarray, psi: dict):
    """Batched network on ``(n, c)`` contexts -> ``(mu, raw_log_scale, cache)``."""
    a1 = ctx @ psi["w1"].T + psi["b1"]
    h1, g1 = gelu_with_grad(a1)
    a2 = h1 @ psi["w2"].T + psi["b2"]
    h2, g2 = gelu_with_grad(a2)
    out = h2 @ psi["w3"].T + psi["b3"]
    return out[:, 0], out[:, 1], (ctx, h1, g1, h2, g2)


def arm_backward(cache, d_mu, d_raw, psi: dict):
    ctx, h1, g1, h2, g2 = cache
    d_out = np.stack([d_mu, d_raw], axis=1)
    grads = {"w3": d_out.T @ h2, "b3": d_out.sum(axis=0)}
    da2 = (d_out @ psi["w3"]) * g2
    grads["w2"] = da2.T @ h1
    grads["b2"] = da2.sum(axis=0)
    da1 = (da2 @ psi["w2"]) * g1
    grads["w1"] = da1.T @ ctx
    grads["b1"] = da1.sum(axis=0)
    return grads, da1 @ psi["w1"]


# ----------------------------------------------------------------------------
# Integrated Laplace likelihood


def laplace_log_pmf(x, b, with_grad: bool = False):
    """Natural-log probability of ``[x - 1/2, x + 1/2]`` under Laplace(0, b).

    Evaluated piecewise so that tails never subtract two nearly equal CDFs.
    With ``with_grad`` also returns ``d/dx`` and ``d/db`` of the log-probability.
    """
    x = np.asarray(x)
    b = np.asarray(b)
    ax = np.abs(x)
    tail = ax >= 0.5
    inv_b = 1.0 / b
    # Tail: 0.5 * exp(-(|x| - 1/2) / b) * (1 - exp(-1/b))
    log_tail = math.log(0.5) - (ax - 0.5) * inv_b + np.log(-np.expm1(-inv_b))
    # Centre: 1 - 0.5 exp(-(1/2 - x)/b) - 0.5 exp(-(1/2 + x)/b)
    xc = np.where(tail, 0.0, x)
    ea = 0.5 * np.exp(-(0.5 - xc) * inv_b)
    eb = 0.5 * np.exp(-(0.5 + xc) * inv_b)
    p_centre = 1.0 - ea - eb
    log_centre = np.log(np.where(tail, 1.0, p_centre))
    logp = np.where(tail, log_tail, log_centre)
    if not with_grad:
        return logp

    sgn = np.sign(x)
    with np.errstate(over="ignore"):
        em1 = np.expm1(inv_b)
        corr = np.where(np.isfinite(em1), inv_b * inv_b / em1, 0.0)
    dx_tail = -sgn * inv_b
    db_tail = (ax - 0.5) * inv_b * inv_b - corr
    pc = np.where(tail, 1.0, p_centre)
    dx_centre = (eb - ea) * inv_b / pc
    db_centre = (-ea * (0.5 - xc) - eb * (0.5 + xc)) * inv_b * inv_b / pc
    return (
        logp,
        np.where(tail, dx_tail, dx_centre),
        np.where(tail, db_tail, db_centre),
    )


def laplace_integer_pmf(k, mu, b):
    """``F(k + 1/2) - F(k - 1/2)`` for the Laplace(mu, b) CDF ``F``."""
    if np.any(np.asarray(b) <= 0):
        raise ValueError("Laplace scale must be positive")
    return np.exp(laplace_log_pmf(np.asarray(k, dtype=np.float64) - mu, np.asarray(b, dtype=np.float64)))


def laplace_cdf(x, mu, b):
    x = np.asarray(x, dtype=np.float64) - mu
    tail = 0.5 * np.exp(-np.abs(x) / b)
    return np.where(x < 0, tail, 1.0 - tail)


# ----------------------------------------------------------------------------
# Rate of the latent pyramid


def latent_rate_bits(latents, psi: dict, template, with_grad: bool = False):
    """``-sum log2 P(z | context)`` over every element of every level.

    With ``with_grad`` returns ``(bits, d_latents, d_psi)``; latent gradients
    include both each symbol's own likelihood and its role as context.
    """
    ctxs = [gather_contexts(z, template) for z in latents]
    sizes = [z.size for z in latents]
    ctx = np.concatenate(ctxs, axis=0)
    values = np.concatenate([z.ravel() for z in latents])
    mu, raw, cache = arm_forward(ctx, psi)
    scale, dscale = raw_to_scale(raw)
    if with_grad:
        logp, dlx, dlb = laplace_log_pmf(values - mu, scale, with_grad=True)
    else:
        logp = laplace_log_pmf(values - mu, scale)
    bits = -float(np.sum(logp, dtype=np.float64)) / LN2
    if not math.isfinite(bits):
        raise UnstableConfigurationError("latent rate is not finite")
    if not with_grad:
        return bits
    # d bits / d log p = -1 / ln 2
    g = -1.0 / LN2
    d_values = g * dlx
    d_mu = -d_values
    d_raw = g * dlb * dscale
    d_psi, d_ctx = arm_backward(cache, d_mu.astype(ctx.dtype), d_raw.astype(ctx.dtype), psi)
    d_latents, start = [], 0
    for z, n in zip(latents, sizes):
        dz = d_values[start:start + n].reshape(z.shape).astype(z.dtype)
        dz = dz + scatter_contexts(d_ctx[start:start + n], z.shape, template)
        d_latents.append(dz)
        start += n
    return bits, d_latents, d_psi


def latent_rate_per_element(latents, psi: dict, template) -> np.ndarray:
    """Bits per latent (raster order, level by level), batched evaluation."""
    ctx = np.concatenate([gather_contexts(z, template) for z in latents], axis=0)
    values = np.concatenate([z.ravel() for z in latents])
    mu, raw, _ = arm_forward(ctx, psi)
    scale, _ = raw_to_scale(raw)
    return -laplace_log_pmf(values - mu, scale) / LN2


# ----------------------------------------------------------------------------
# Per-element float64 route shared by the entropy encoder and decoder


def _gelu64(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def arm_eval(ctx, psi: dict) -> tuple[float, float]:
    """Mean and clipped scale for one context vector, in float64."""
    ctx = np.asarray(ctx, dtype=np.float64)
    h = _gelu64(psi["w1"] @ ctx + psi["b1"])
    h = _gelu64(psi["w2"] @ h + psi["b2"])
    out = psi["w3"] @ h + psi["b3"]
    mu, raw = float(out[0]), float(out[1])
    if not (math.isfinite(mu) and math.isfinite(raw)):
        raise UnstableConfigurationError(f"ARM produced non-finite output ({mu}, {raw})")
    scale = min(max(math.exp(min(raw - LOG_SCALE_SHIFT, 700.0)), SCALE_MIN), SCALE_MAX)
    return mu, scale


def as_float64(params: dict) -> dict:
    return {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}

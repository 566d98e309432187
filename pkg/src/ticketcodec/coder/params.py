"""Scalar quantization and entropy coding of small network parameter sets.

A parameter vector ``p`` is mapped to integers ``q = round(p / step)`` and
coded under a zero-mean integrated Laplace prior whose scale is derived from
the standard deviation of the dequantized values, ``b = std(q * step) / sqrt(2)``,
expressed in lattice units as ``b / step``.

Section payload: ``int32 lo, int32 hi`` (symbol range, little-endian)
followed by the range-coded symbols.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..arm import laplace_log_pmf
from ..quantnoise import hard_round
from .cdf import quantize_cdf
from .rangecoder import RangeDecoder, RangeEncoder

STEP_EXPONENTS = tuple(range(2, 13))
STD_FLOOR = 1e-8
_RANGE = struct.Struct("<ii")


def step_from_index(k: int) -> float:
    return 2.0 ** -k


def flatten_params(params: dict) -> np.ndarray:
    return np.concatenate([np.asarray(params[k], dtype=np.float64).ravel() for k in params])


def unflatten_params(flat: np.ndarray, template: dict, dtype=np.float32) -> dict:
    out, start = {}, 0
    for k, v in template.items():
        n = int(np.prod(np.shape(v)))
        out[k] = np.asarray(flat[start:start + n], dtype=dtype).reshape(np.shape(v))
        start += n
    if start != flat.size:
        raise ValueError(f"parameter vector has {flat.size} values, template needs {start}")
    return out


def quantize_params(flat, step: float):
    """Return ``(q, std32)`` where ``std32`` is the float32-rounded prior stddev."""
    if not step > 0:
        raise ValueError(f"quantization step must be positive, got {step}")
    q = hard_round(np.asarray(flat, dtype=np.float64) / step).astype(np.int64)
    std = float(np.std(q * step)) if q.size else 0.0
    std32 = float(np.float32(max(std, STD_FLOOR)))
    return q, std32


def dequantize(q, step: float) -> np.ndarray:
    return np.asarray(q, dtype=np.float64) * step


def lattice_scale(std: float, step: float) -> float:
    return max(std, STD_FLOOR) / math.sqrt(2.0) / step


def param_bits_model(q, std: float, step: float) -> float:
    """``-sum log2 p(q_i)`` under the continuous prior (no range truncation)."""
    q = np.asarray(q, dtype=np.float64)
    if q.size == 0:
        return 0.0
    logp = laplace_log_pmf(q, lattice_scale(std, step))
    return -float(np.sum(logp)) / math.log(2.0)


def encode_params(q, std: float, step: float) -> bytes:
    q = np.asarray(q, dtype=np.int64)
    lo, hi = (int(q.min()), int(q.max())) if q.size else (0, 0)
    if lo < -(2 ** 31) or hi >= 2 ** 31:
        raise OverflowError("quantized parameters exceed int32")
    cdf = quantize_cdf(0.0, lattice_scale(std, step), lo, hi)
    enc = RangeEncoder()
    for s in q.tolist():
        enc.encode_symbol(cdf, s)
    return _RANGE.pack(lo, hi) + enc.finish()


def decode_params(data: bytes, n: int, std: float, step: float) -> np.ndarray:
    if len(data) < _RANGE.size:
        raise ValueError("parameter section shorter than its range preamble")
    lo, hi = _RANGE.unpack_from(data)
    if lo > hi:
        raise ValueError(f"corrupt parameter range [{lo}, {hi}]")
    cdf = quantize_cdf(0.0, lattice_scale(std, step), lo, hi)
    dec = RangeDecoder(data[_RANGE.size:])
    return np.array([dec.decode_symbol(cdf) for _ in range(n)], dtype=np.int64)


def compress_network_params(flat, step: float):
    """Quantize and code a flat parameter vector.

    Returns ``(payload, q, std32)``; the decoder needs ``std32`` and ``step``
    from the header and reconstructs ``q * step``.
    """
    q, std32 = quantize_params(flat, step)
    return encode_params(q, std32, step), q, std32


def range_preamble_bits() -> int:
    return 8 * _RANGE.size


@dataclass
class StepSearchResult:
    psi_index: int
    theta_index: int
    cost: float
    psi_costs: dict = field(default_factory=dict)
    theta_costs: dict = field(default_factory=dict)

    @property
    def psi_step(self) -> float:
        return step_from_index(self.psi_index)

    @property
    def theta_step(self) -> float:
        return step_from_index(self.theta_index)


def search_quantization_steps(
    theta_flat,
    psi_flat,
    latent_bits: Callable[[np.ndarray], float],
    distortion: Callable[[np.ndarray], float],
    lam: float,
    n_pixels: int,
    exponents=STEP_EXPONENTS,
    fixed_bits: float = 0.0,
) -> StepSearchResult:
    """Greedy two-pass step search over ``{2^-k}``.

    The ARM only affects rate, so its step minimises ``R_psi + R_z(psi_hat)``;
    the ModNet step then minimises ``D(theta_hat) + lam * R_theta / n_pixels``.
    ``latent_bits`` receives dequantized ARM parameters and ``distortion``
    dequantized ModNet parameters. ``fixed_bits`` (mask, header) only shifts
    the reported cost.
    """
    psi_costs = {}
    for k in exponents:
        step = step_from_index(k)
        q, std = quantize_params(psi_flat, step)
        psi_costs[k] = param_bits_model(q, std, step) + latent_bits(dequantize(q, step))
    best_psi = min(psi_costs, key=lambda k: (psi_costs[k], k))

    theta_costs = {}
    for k in exponents:
        step = step_from_index(k)
        q, std = quantize_params(theta_flat, step)
        bits = param_bits_model(q, std, step)
        theta_costs[k] = distortion(dequantize(q, step)) + lam * bits / n_pixels
    best_theta = min(theta_costs, key=lambda k: (theta_costs[k], k))

    cost = theta_costs[best_theta] + lam * (psi_costs[best_psi] + fixed_bits) / n_pixels
    return StepSearchResult(best_psi, best_theta, cost, psi_costs, theta_costs)

"""Frozen random weights built from fixed Fourier bases, plus score init."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FourierConfig:
    phases: int = 32
    freqs: int = 64

    def __post_init__(self):
        if self.phases < 1 or self.freqs < 1:
            raise ValueError(f"invalid Fourier config {self}")

    @property
    def n_basis(self) -> int:
        return 2 * self.freqs * self.phases

    def phase_vector(self) -> np.ndarray:
        return 2.0 * math.pi * np.arange(self.phases, dtype=np.float64) / self.phases

    def frequency_vector(self) -> np.ndarray:
        # Low half {1/F, ..., 1} then high half {1, ..., F}; 1 appears twice.
        k = np.arange(1, self.freqs + 1, dtype=np.float64)
        return np.concatenate([k / self.freqs, k])


def fourier_basis(positions: np.ndarray, cfg: FourierConfig) -> np.ndarray:
    """Basis matrix of shape ``(M, len(positions))``, phase-major rows.

    Row ``p * 2F + f`` is ``cos(w_f * a + phi_p)``.
    """
    w = cfg.frequency_vector()
    phi = cfg.phase_vector()
    arg = w[None, :, None] * positions[None, None, :] + phi[:, None, None]
    return np.cos(arg).reshape(cfg.n_basis, positions.size)


def build_fourier_weights(
    out_dim: int,
    in_dim: int,
    cfg: FourierConfig,
    rng: np.random.Generator,
    max_resamples: int = 10,
) -> np.ndarray:
    """Sample ``W0 = Lambda @ B`` for one layer, returned in float64.

    Each coefficient row ``m`` is drawn from U(-s_m, s_m) with
    ``s_m = sqrt(6 / (M * sum_t b_{m,t}^2))``.
    """
    if out_dim < 1 or in_dim < 1:
        raise ValueError(f"layer dims must be positive, got {out_dim}x{in_dim}")
    for _ in range(max_resamples + 1):
        positions = rng.uniform(-math.pi, math.pi, size=in_dim)
        basis = fourier_basis(positions, cfg)
        energy = np.sum(basis * basis, axis=1)
        if np.all(energy > 0.0):
            break
    else:
        raise RuntimeError(f"degenerate Fourier basis after {max_resamples} resamples")
    bound = np.sqrt(6.0 / (cfg.n_basis * energy))
    coeffs = rng.uniform(-1.0, 1.0, size=(out_dim, cfg.n_basis)) * bound[None, :]
    return coeffs @ basis


def coefficient_bounds(in_dim: int, cfg: FourierConfig, rng: np.random.Generator):
    """Replay the position draw of ``build_fourier_weights`` and return
    ``(basis, per-row coefficient bound)``. Used for bound checks."""
    positions = rng.uniform(-math.pi, math.pi, size=in_dim)
    basis = fourier_basis(positions, cfg)
    energy = np.sum(basis * basis, axis=1)
    return basis, np.sqrt(6.0 / (cfg.n_basis * energy))


def init_scores(out_dim: int, in_dim: int, rng: np.random.Generator) -> np.ndarray:
    """Kaiming-uniform scores on ``[-sqrt(6/in_dim), sqrt(6/in_dim)]``."""
    if out_dim < 1 or in_dim < 1:
        raise ValueError(f"layer dims must be positive, got {out_dim}x{in_dim}")
    bound = math.sqrt(6.0 / in_dim)
    return rng.uniform(-bound, bound, size=(out_dim, in_dim))

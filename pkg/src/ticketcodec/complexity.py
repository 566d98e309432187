"""Multiply-accumulate counts per decoded pixel."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MacCount:
    """Per-pixel MACs split by component.

    ``lower`` skips masked synthesis weights, ``upper`` multiplies by all of
    them. The other terms are shared by both bounds.
    """

    synth_active: float
    synth_total: float
    modnet: float
    upsample: float
    arm: float

    @property
    def shared(self) -> float:
        return self.modnet + self.upsample + self.arm

    @property
    def lower(self) -> float:
        return self.synth_active + self.shared

    @property
    def upper(self) -> float:
        return self.synth_total + self.shared


def modnet_macs_per_pixel(d: int, n_levels: int, n_residual: int) -> int:
    return n_levels * d + d * 3 + 3 * 3 + n_residual * 3 * 3 * 9


def arm_macs_per_latent(c: int) -> int:
    return c * c + c * c + c * 2


def count_macs(model, masks=None) -> MacCount:
    """MACs per pixel of ``model`` (a :class:`ticketcodec.model.CodecModel`).

    The active synthesis count comes from ``masks`` when given, otherwise from
    the configured mask ratio.
    """
    arch = model.arch
    hw = float(model.n_pixels)
    if model.net is None:
        active = total = 0
    else:
        total = model.net.n_weights
        if arch.mode == "dense_trained":
            active = total
        elif masks is not None:
            active = int(sum(int(np.count_nonzero(m)) for m in masks))
        else:
            active = model.net.n_active
    n_lat = sum(h * w for h, w in model.shapes)
    return MacCount(
        synth_active=float(active),
        synth_total=float(total),
        modnet=float(modnet_macs_per_pixel(arch.d, arch.n_levels, arch.n_residual)),
        upsample=model.upsampler.upsample_taps() / hw,
        arm=arm_macs_per_latent(arch.c) * n_lat / hw,
    )

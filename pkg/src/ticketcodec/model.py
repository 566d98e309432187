"""Composition of latents, upsampling, ModNet and synthesis into one codec model."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .arm import context_template, init_arm
from .fourier import FourierConfig
from .modnet import (
    N_LEVELS,
    Upsampler,
    init_modnet,
    modnet_backward,
    modnet_forward,
    modnet_widths,
    rewind_backward,
    rewind_concat,
    zero_pyramid,
)
from .supermask import SuperMaskNet, pixel_coords, synth_backward, synth_forward

MODES = ("full", "modnet_only", "dense_trained")


@dataclass(frozen=True)
class ArchConfig:
    d: int = 32
    c: int = 16
    n_levels: int = N_LEVELS
    n_residual: int = 0
    hidden_dims: tuple = (32, 24, 16)
    fourier: FourierConfig = field(default_factory=FourierConfig)
    mask_ratio: float = 0.2
    mode: str = "full"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.n_residual not in (0, 1, 2):
            raise ValueError("n_residual must be 0, 1 or 2")
        if not 0.0 < self.mask_ratio <= 1.0:
            raise ValueError(f"mask ratio must lie in (0, 1], got {self.mask_ratio}")


@dataclass
class Params:
    """Everything the encoder optimises.

    ``syn`` holds the score matrices in full mode, the trained synthesis
    weights in dense mode and is empty for the ModNet-only ablation.
    """

    latents: list
    theta: dict
    psi: dict
    syn: list = field(default_factory=list)

    def copy(self) -> "Params":
        return copy.deepcopy(self)

    def arrays(self) -> list[np.ndarray]:
        return list(self.latents) + list(self.theta.values()) + list(self.psi.values()) + list(self.syn)


class CodecModel:
    """Shared forward/backward used by the encoder and (forward only) the decoder."""

    def __init__(self, height: int, width: int, arch: ArchConfig, seed: int,
                 dtype=np.float32, with_scores: bool = True):
        self.height, self.width = height, width
        self.n_pixels = height * width
        self.arch = arch
        self.seed = seed
        self.dtype = dtype
        self.upsampler = Upsampler(height, width, arch.n_levels, dtype)
        self.shapes = self.upsampler.shapes
        self.coords = pixel_coords(height, width, dtype)
        self.template = context_template(arch.c)
        self.net = None
        if arch.mode != "modnet_only":
            self.net = SuperMaskNet(
                arch.hidden_dims,
                modnet_widths(arch.d, arch.n_residual),
                arch.mask_ratio,
                seed,
                arch.fourier,
                dtype,
                with_scores=with_scores and arch.mode == "full",
            )

    def init_params(self) -> Params:
        a = self.arch
        syn = []
        if a.mode == "full":
            syn = [s.copy() for s in self.net.scores]
        elif a.mode == "dense_trained":
            syn = [np.array(w) for w in self.net.w0]
        return Params(
            latents=zero_pyramid(self.height, self.width, a.n_levels, self.dtype),
            theta=init_modnet(a.d, a.n_levels, a.n_residual, self.seed, self.dtype),
            psi=init_arm(a.c, self.seed, self.dtype),
            syn=syn,
        )

    def weights_for(self, params: Params, masks=None):
        """Effective synthesis weights: masked W0, trained W, or None."""
        mode = self.arch.mode
        if mode == "full":
            if masks is None:
                masks = self.net.masks() if not params.syn else self.masks_from(params.syn)
            return self.net.effective_weights(masks)
        if mode == "dense_trained":
            return params.syn
        return None

    def masks_from(self, scores):
        from .supermask import compute_mask

        return compute_mask(scores, self.arch.mask_ratio)

    def forward(self, latents, theta, weights):
        u0 = self.upsampler.forward(latents)
        outputs, mcache = modnet_forward(u0, theta, self.height, self.width)
        if weights is None:
            y = np.tanh(outputs[-1])
            return 0.5 * (y + 1.0), ("modnet_only", outputs, mcache, y)
        mods = [rewind_concat(outputs, i) for i in (1, 2, 3)]
        rgb, tape = synth_forward(weights, self.coords, mods)
        return rgb, ("synth", outputs, mcache, (weights, tape))

    def backward(self, cache, d_rgb, theta):
        """Return ``(d_latents, d_theta, d_weights)``; ``d_weights`` is None without synthesis."""
        kind, outputs, mcache, extra = cache
        if kind == "modnet_only":
            y = extra
            d_last = 0.5 * d_rgb * (1.0 - y * y)
            d_outputs = [np.zeros_like(o) for o in outputs]
            d_outputs[-1] = d_last
            d_weights = None
        else:
            weights, tape = extra
            d_weights, d_mods = synth_backward(weights, tape, d_rgb)
            d_outputs = rewind_backward(d_mods, outputs)
        d_theta, d_u0 = modnet_backward(d_outputs, theta, mcache, self.height, self.width)
        d_latents = self.upsampler.backward(d_u0)
        return d_latents, d_theta, d_weights

    def synthesize(self, latents, theta, weights) -> np.ndarray:
        """Reconstruction as a ``(3, H, W)`` array clipped to ``[0, 1]``."""
        lat = [np.asarray(z, dtype=self.dtype) for z in latents]
        rgb, _ = self.forward(lat, theta, weights)
        return np.clip(rgb, 0.0, 1.0).reshape(3, self.height, self.width)

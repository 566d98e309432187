"""Masked coordinate-MLP synthesis network.

A stack of bias-free linear layers over pixel coordinates. Each hidden
layer's output is concatenated after its modulation map, and the effective
weights are ``tau * W0`` where ``tau`` keeps the globally top-scoring
fraction of all weights. Pixels are columns: activations have shape
``(channels, n_pixels)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fourier import FourierConfig, build_fourier_weights, init_scores
from .numcore import derive_stream, gelu_with_grad

OUT_CHANNELS = 3


def layer_shapes(hidden_dims, mod_widths) -> list[tuple[int, int]]:
    """``(out_dim, in_dim)`` per layer: coords first, then one layer per modulation.

    ``mod_widths[i]`` is the channel count of the modulation concatenated
    before layer ``i + 1``.
    """
    if len(mod_widths) != len(hidden_dims):
        raise ValueError("need one modulation width per hidden layer")
    outs = list(hidden_dims) + [OUT_CHANNELS]
    ins = [2] + [h + m for h, m in zip(hidden_dims, mod_widths)]
    return list(zip(outs, ins))


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def active_count(ratio: float, total: int) -> int:
    return round_half_up(ratio * total)


def compute_mask(scores: list[np.ndarray], ratio: float) -> list[np.ndarray]:
    """Binary masks keeping the top ``round(ratio * N)`` scores over all layers.

    Ties are broken by (layer index, row-major position) so the result is a
    pure function of the score ordering.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"mask ratio must lie in (0, 1], got {ratio}")
    flat = np.concatenate([np.asarray(s).ravel() for s in scores])
    if flat.size == 0:
        raise ValueError("no weights to mask")
    k = active_count(ratio, flat.size)
    keep = np.zeros(flat.size, dtype=bool)
    if k > 0:
        order = np.argsort(-flat, kind="stable")
        keep[order[:k]] = True
    masks, start = [], 0
    for s in scores:
        n = np.asarray(s).size
        masks.append(keep[start:start + n].reshape(np.shape(s)))
        start += n
    return masks


def update_scores(scores: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
    """Plain gradient step ``p <- p - lr * grad`` in place."""
    if lr < 0:
        raise ValueError(f"score learning rate must be non-negative, got {lr}")
    for s, g in zip(scores, grads):
        s -= lr * g


@dataclass
class ForwardTape:
    inputs: list[np.ndarray] = field(default_factory=list)   # G_i fed to layer i
    act_grads: list[np.ndarray] = field(default_factory=list)  # sigma'(pre-activation)
    mod_widths: list[int] = field(default_factory=list)
    out: np.ndarray | None = None  # tanh output, before the [0, 1] mapping


def synth_forward(weights, coords, mods) -> tuple[np.ndarray, ForwardTape]:
    """Evaluate the stack with effective weights ``weights``.

    ``coords`` is ``(2, n)``; ``mods[i]`` is concatenated in front of the
    output of layer ``i`` before layer ``i + 1``. Returns RGB in ``[0, 1]``.
    """
    if len(mods) != len(weights) - 1:
        raise ValueError(f"expected {len(weights) - 1} modulation maps, got {len(mods)}")
    tape = ForwardTape()
    g = coords
    for i, w in enumerate(weights):
        if g.shape[0] != w.shape[1]:
            raise ValueError(
                f"layer {i}: input has {g.shape[0]} channels, weights expect {w.shape[1]}"
            )
        tape.inputs.append(g)
        a = w @ g
        if i < len(weights) - 1:
            f, da = gelu_with_grad(a)
            tape.act_grads.append(da)
            m = mods[i]
            tape.mod_widths.append(m.shape[0])
            g = np.concatenate([m, f], axis=0)
        else:
            y = np.tanh(a)
            tape.act_grads.append(1.0 - y * y)
            tape.out = y
    return 0.5 * (tape.out + 1.0), tape


def synth_backward(weights, tape: ForwardTape, d_rgb):
    """Backpropagate ``dLoss/dRGB`` through the stack.

    Returns ``(weight_grads, mod_grads)`` where ``weight_grads[i]`` is the
    gradient w.r.t. the effective weights of layer ``i``.
    """
    if tape.out is None:
        raise RuntimeError("backward called without a matching forward tape")
    n_layers = len(weights)
    weight_grads = [None] * n_layers
    mod_grads = [None] * (n_layers - 1)
    d_pre = 0.5 * d_rgb * tape.act_grads[-1]
    for i in range(n_layers - 1, -1, -1):
        weight_grads[i] = d_pre @ tape.inputs[i].T
        if i == 0:
            break
        d_in = weights[i].T @ d_pre
        mw = tape.mod_widths[i - 1]
        mod_grads[i - 1] = d_in[:mw]
        d_pre = d_in[mw:] * tape.act_grads[i - 1]
    return weight_grads, mod_grads


class SuperMaskNet:
    """Frozen Fourier-initialized weights with learnable scores."""

    def __init__(
        self,
        hidden_dims,
        mod_widths,
        mask_ratio: float,
        seed: int,
        fourier: FourierConfig = FourierConfig(),
        dtype=np.float32,
        with_scores: bool = True,
    ):
        if not 0.0 < mask_ratio <= 1.0:
            raise ValueError(f"mask ratio must lie in (0, 1], got {mask_ratio}")
        self.hidden_dims = tuple(hidden_dims)
        self.mod_widths = tuple(mod_widths)
        self.mask_ratio = mask_ratio
        self.seed = seed
        self.fourier = fourier
        self.dtype = dtype
        self.shapes = layer_shapes(self.hidden_dims, self.mod_widths)
        self.w0 = [
            build_fourier_weights(o, i, fourier, derive_stream(seed, f"W0/layer{n}")).astype(dtype)
            for n, (o, i) in enumerate(self.shapes)
        ]
        for w in self.w0:
            w.flags.writeable = False
        self.scores = None
        if with_scores:
            self.scores = [
                init_scores(o, i, derive_stream(seed, f"scores/layer{n}")).astype(dtype)
                for n, (o, i) in enumerate(self.shapes)
            ]

    @property
    def n_weights(self) -> int:
        return sum(o * i for o, i in self.shapes)

    @property
    def n_active(self) -> int:
        return active_count(self.mask_ratio, self.n_weights)

    def masks(self) -> list[np.ndarray]:
        return compute_mask(self.scores, self.mask_ratio)

    def effective_weights(self, masks) -> list[np.ndarray]:
        return [w * m.astype(w.dtype) for w, m in zip(self.w0, masks)]

    def forward(self, coords, mods, masks=None):
        masks = self.masks() if masks is None else masks
        weights = self.effective_weights(masks)
        rgb, tape = synth_forward(weights, coords, mods)
        return rgb, (weights, tape)

    def backward(self, state, d_rgb):
        """Straight-through score gradients and exact modulation gradients.

        The score gradient of weight ``(k, j)`` is ``dL/da_k * w0_kj * g_j``
        whether or not the weight is currently active.
        """
        weights, tape = state
        weight_grads, mod_grads = synth_backward(weights, tape, d_rgb)
        score_grads = [gw * w0 for gw, w0 in zip(weight_grads, self.w0)]
        return score_grads, mod_grads


def pixel_coords(height: int, width: int, dtype=np.float32) -> np.ndarray:
    """``(2, H*W)`` coordinates normalised per axis to ``[-1, 1]``, row first."""
    def axis(n):
        if n == 1:
            return np.zeros(1)
        return 2.0 * np.arange(n) / (n - 1) - 1.0
    rr, cc = np.meshgrid(axis(height), axis(width), indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()]).astype(dtype)

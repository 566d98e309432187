"""Latent pyramid, fixed upsampling and the modulation network.

Channel maps are stored as ``(channels, H*W)`` so that 1x1 convolutions are
plain matrix products.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

from .numcore import derive_stream, gelu_with_grad

N_LEVELS = 7
MOD_CHANNELS = 3


def pyramid_shapes(height: int, width: int, n_levels: int = N_LEVELS) -> list[tuple[int, int]]:
    shapes = [(height, width)]
    for _ in range(n_levels - 1):
        h, w = shapes[-1]
        shapes.append((math.ceil(h / 2), math.ceil(w / 2)))
    return shapes


def zero_pyramid(height, width, n_levels=N_LEVELS, dtype=np.float32) -> list[np.ndarray]:
    return [np.zeros(s, dtype=dtype) for s in pyramid_shapes(height, width, n_levels)]


def n_latents(height: int, width: int, n_levels: int = N_LEVELS) -> int:
    return sum(h * w for h, w in pyramid_shapes(height, width, n_levels))


def double_1d(x: np.ndarray, out_len: int, axis: int = 0) -> np.ndarray:
    """One stride-2 transpose convolution with taps [0.25, 0.75, 0.75, 0.25].

    Output ``2j`` is ``0.75 x[j] + 0.25 x[j+1]`` and ``2j+1`` is
    ``0.25 x[j] + 0.75 x[j+1]``, with ``x[n] = x[n-1]`` at the border; the
    result is cropped to ``out_len``.
    """
    x = np.moveaxis(np.asarray(x), axis, 0)
    n = x.shape[0]
    if not 2 * n - 1 <= out_len <= 2 * n:
        raise ValueError(f"cannot double length {n} to {out_len}")
    nxt = np.concatenate([x[1:], x[-1:]], axis=0)
    y = np.empty((2 * n,) + x.shape[1:], dtype=np.result_type(x, np.float32))
    y[0::2] = 0.75 * x + 0.25 * nxt
    y[1::2] = 0.25 * x + 0.75 * nxt
    return np.moveaxis(y[:out_len], 0, axis)


def upsample_grid(grid: np.ndarray, level_shapes) -> np.ndarray:
    """Upsample a level-``i`` grid through every finer level up to level 1.

    ``level_shapes`` lists the shapes from level 1 down to the grid's level.
    """
    out = np.asarray(grid)
    for h, w in reversed(level_shapes[:-1]):
        out = double_1d(out, h, axis=0)
        out = double_1d(out, w, axis=1)
    return out


def _axis_operator(sizes, dtype) -> sp.csr_matrix:
    # sizes: lengths from full resolution down to this level.
    eye = np.eye(sizes[-1])
    for n in reversed(sizes[:-1]):
        eye = double_1d(eye, n, axis=0)
    return sp.csr_matrix(eye.astype(dtype))


class Upsampler:
    """Linear map from a latent pyramid to its ``(L, H*W)`` full-resolution stack.

    Each level is represented by separable sparse row/column operators built
    by running :func:`double_1d` on identity matrices, so the forward map and
    its adjoint are the same arithmetic as the direct route.
    """

    def __init__(self, height: int, width: int, n_levels: int = N_LEVELS, dtype=np.float32):
        self.height, self.width = height, width
        self.shapes = pyramid_shapes(height, width, n_levels)
        self.dtype = dtype
        hs = [s[0] for s in self.shapes]
        ws = [s[1] for s in self.shapes]
        self.row_ops = [_axis_operator(hs[: i + 1], dtype) for i in range(n_levels)]
        self.col_ops = [_axis_operator(ws[: i + 1], dtype) for i in range(n_levels)]
        self.col_ops_t = [op.T.tocsr() for op in self.col_ops]

    def forward(self, latents) -> np.ndarray:
        out = np.empty((len(latents), self.height * self.width), dtype=self.dtype)
        for i, z in enumerate(latents):
            if i == 0:
                out[0] = z.ravel()
                continue
            rows = self.row_ops[i] @ z  # (H, w_i)
            full = (self.col_ops[i] @ rows.T).T
            out[i] = full.ravel()
        return out

    def backward(self, d_u0: np.ndarray) -> list[np.ndarray]:
        grads = []
        for i, (h, w) in enumerate(self.shapes):
            g = d_u0[i].reshape(self.height, self.width)
            if i == 0:
                grads.append(g.copy())
                continue
            g = self.row_ops[i].T @ g  # (h_i, W)
            g = (self.col_ops_t[i] @ g.T).T  # (h_i, w_i)
            grads.append(np.ascontiguousarray(g))
        return grads

    def upsample_taps(self) -> int:
        """Multiplies used by the doubling chain for all levels (2 per output per axis)."""
        total = 0
        for i in range(1, len(self.shapes)):
            for lvl in range(i, 0, -1):
                h_in, w_in = self.shapes[lvl]
                h_out, w_out = self.shapes[lvl - 1]
                total += 2 * h_out * w_in + 2 * h_out * w_out
        return total


# ----------------------------------------------------------------------------
# Modulation network


def modnet_widths(d: int, n_residual: int) -> list[int]:
    """Modulation channel counts fed to synthesis layers 1..3."""
    extra = MOD_CHANNELS if n_residual else 0
    return [MOD_CHANNELS + extra, 2 * MOD_CHANNELS + extra, 2 * MOD_CHANNELS + extra + d]


def init_modnet(d: int, n_levels: int, n_residual: int, seed: int, dtype=np.float32) -> dict:
    """Uniform(+-1/sqrt(fan_in)) init for weights and biases."""
    rng = derive_stream(seed, "modnet/init")

    def uni(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    theta = {
        "w1": uni((d, n_levels), n_levels), "b1": uni((d,), n_levels),
        "w2": uni((MOD_CHANNELS, d), d), "b2": uni((MOD_CHANNELS,), d),
        "w3": uni((MOD_CHANNELS, MOD_CHANNELS), MOD_CHANNELS),
        "b3": uni((MOD_CHANNELS,), MOD_CHANNELS),
    }
    for r in range(n_residual):
        # Residual branches start at zero so the improved variant begins as the base one.
        theta[f"k{r}"] = np.zeros((MOD_CHANNELS, MOD_CHANNELS, 3, 3), dtype=dtype)
        theta[f"kb{r}"] = np.zeros((MOD_CHANNELS,), dtype=dtype)
    return theta


def _shift(x: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """``out[:, y, x] = x[:, y + dy, x + dx]`` with zeros outside."""
    c, h, w = x.shape
    out = np.zeros_like(x)
    ys, yd = slice(max(dy, 0), h + min(dy, 0)), slice(max(-dy, 0), h + min(-dy, 0))
    xs, xd = slice(max(dx, 0), w + min(dx, 0)), slice(max(-dx, 0), w + min(-dx, 0))
    out[:, yd, xd] = x[:, ys, xs]
    return out


def conv3x3(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Zero-padded 3x3 convolution of a ``(C, H, W)`` map (cross-correlation)."""
    out = np.zeros((kernel.shape[0],) + x.shape[1:], dtype=x.dtype)
    for ky in range(3):
        for kx in range(3):
            shifted = _shift(x, ky - 1, kx - 1)
            out += np.einsum("oc,chw->ohw", kernel[:, :, ky, kx], shifted)
    return out + bias[:, None, None]


def conv3x3_backward(x, kernel, d_out):
    dk = np.zeros_like(kernel)
    dx = np.zeros_like(x)
    for ky in range(3):
        for kx in range(3):
            dy_, dx_ = ky - 1, kx - 1
            shifted = _shift(x, dy_, dx_)
            dk[:, :, ky, kx] = np.einsum("ohw,chw->oc", d_out, shifted)
            back = np.einsum("oc,ohw->chw", kernel[:, :, ky, kx], d_out)
            dx += _shift(back, -dy_, -dx_)
    return dk, dx, d_out.sum(axis=(1, 2))


def modnet_forward(u0: np.ndarray, theta: dict, height: int, width: int):
    """Return ``(outputs, cache)`` where outputs is ``[U1, U2, U3(, U_res)]``."""
    if u0.shape[0] != theta["w1"].shape[1]:
        raise ValueError(
            f"ModNet expects {theta['w1'].shape[1]} latent channels, got {u0.shape[0]}"
        )
    a1 = theta["w1"] @ u0 + theta["b1"][:, None]
    u1, g1 = gelu_with_grad(a1)
    a2 = theta["w2"] @ u1 + theta["b2"][:, None]
    u2, g2 = gelu_with_grad(a2)
    u3 = theta["w3"] @ u2 + theta["b3"][:, None]
    outputs = [u1, u2, u3]
    cache = {"u0": u0, "u1": u1, "u2": u2, "g1": g1, "g2": g2, "res": []}
    n_res = sum(1 for k in theta if k.startswith("kb"))
    cur = u3
    for r in range(n_res):
        img = cur.reshape(MOD_CHANNELS, height, width)
        act, gact = gelu_with_grad(img)
        branch = conv3x3(act, theta[f"k{r}"], theta[f"kb{r}"])
        cache["res"].append((act, gact))
        cur = cur + branch.reshape(MOD_CHANNELS, -1)
    if n_res:
        outputs.append(cur)
    return outputs, cache


def modnet_backward(d_outputs, theta: dict, cache: dict, height: int, width: int):
    """Gradients ``(d_theta, d_u0)`` given gradients for every ModNet output."""
    grads = {}
    n_res = len(cache["res"])
    du3 = d_outputs[2].copy()
    if n_res:
        d_cur = d_outputs[3]
        for r in range(n_res - 1, -1, -1):
            act, gact = cache["res"][r]
            d_img = d_cur.reshape(MOD_CHANNELS, height, width)
            dk, d_act, db = conv3x3_backward(act, theta[f"k{r}"], d_img)
            grads[f"k{r}"], grads[f"kb{r}"] = dk, db
            d_cur = d_cur + (d_act * gact).reshape(MOD_CHANNELS, -1)
        du3 += d_cur
    grads["w3"] = du3 @ cache["u2"].T
    grads["b3"] = du3.sum(axis=1)
    du2 = d_outputs[1] + theta["w3"].T @ du3
    da2 = du2 * cache["g2"]
    grads["w2"] = da2 @ cache["u1"].T
    grads["b2"] = da2.sum(axis=1)
    du1 = d_outputs[0] + theta["w2"].T @ da2
    da1 = du1 * cache["g1"]
    grads["w1"] = da1 @ cache["u0"].T
    grads["b1"] = da1.sum(axis=1)
    d_u0 = theta["w1"].T @ da1
    return grads, d_u0


def rewind_order(outputs) -> list[np.ndarray]:
    """ModNet outputs deepest first: ``[U_res?, U3, U2, U1]``."""
    return list(reversed(outputs))


def rewind_concat(outputs, i: int) -> np.ndarray:
    """Modulation ``M_i`` for synthesis layer ``i`` (1-based).

    ``M_i`` concatenates the ``i`` deepest ModNet outputs, deepest first; with
    residual 3x3 convolutions their output is prepended to every ``M_i``.
    """
    extra = 1 if len(outputs) == 4 else 0
    if not 1 <= i <= 3:
        raise ValueError(f"modulation index {i} outside 1..3")
    return np.concatenate(rewind_order(outputs)[: i + extra], axis=0)


def rewind_backward(d_mods, outputs) -> list[np.ndarray]:
    """Sum gradients of ``M_1..M_3`` back onto the ModNet outputs."""
    order = rewind_order(outputs)
    d_order = [np.zeros_like(o) for o in order]
    extra = 1 if len(outputs) == 4 else 0
    for i, dm in enumerate(d_mods, start=1):
        start = 0
        for j in range(i + extra):
            c = order[j].shape[0]
            d_order[j] += dm[start:start + c]
            start += c
    return list(reversed(d_order))

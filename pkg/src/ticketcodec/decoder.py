"""Reconstruct an image from a ``.ltry`` stream alone."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arm import as_float64
from .coder.bitstream import BitstreamError, CodecBitstream
from .coder.latents import decode_latents
from .coder.mask import decode_mask
from .coder.params import decode_params, dequantize, range_preamble_bits, step_from_index, unflatten_params
from .coder.rangecoder import RangeDecodeError
from .complexity import MacCount, count_macs
from .fourier import FourierConfig
from .model import ArchConfig, CodecModel
from .numcore import UnstableConfigurationError

MODES_BY_CODE = {0: "full", 1: "modnet_only", 2: "dense_trained"}


class DecodeError(ValueError):
    """Any failure to turn a stream into an image."""


@dataclass
class DecodedImage:
    pixels: np.ndarray
    macs: MacCount
    mode: str


def _model_from_header(h) -> CodecModel:
    mode = MODES_BY_CODE.get(h.mode)
    if mode is None:
        raise DecodeError(f"unknown codec mode {h.mode}")
    try:
        arch = ArchConfig(
            d=h.d, c=h.c, n_levels=h.n_levels, n_residual=h.n_residual,
            hidden_dims=tuple(h.hidden_dims), fourier=FourierConfig(h.phases, h.freqs),
            mask_ratio=h.mask_ratio, mode=mode,
        )
        return CodecModel(h.height, h.width, arch, h.seed, np.float32, with_scores=False)
    except ValueError as exc:
        raise DecodeError(f"header describes an invalid model: {exc}") from exc


def _split(weights_like, flat):
    out, start = [], 0
    for w in weights_like:
        n = w.size
        out.append(flat[start:start + n].reshape(w.shape))
        start += n
    return out


def _decode(data: bytes):
    stream = CodecBitstream.from_bytes(data)
    h = stream.header
    model = _model_from_header(h)
    if h.n_levels != len(model.shapes):
        raise DecodeError("latent level count does not match the image size")
    from .arm import init_arm
    from .modnet import init_modnet

    psi_tpl = init_arm(h.c, 0, np.float32)
    theta_tpl = init_modnet(h.d, h.n_levels, h.n_residual, 0, np.float32)
    n_psi = sum(v.size for v in psi_tpl.values())
    n_theta = sum(v.size for v in theta_tpl.values())

    psi_step = step_from_index(h.psi_step)
    psi_q = decode_params(stream.sections["psi"], n_psi, h.psi_std, psi_step)
    psi_hat = unflatten_params(dequantize(psi_q, psi_step), psi_tpl, np.float64)
    latents = decode_latents(stream.sections["z"], model.shapes, as_float64(psi_hat),
                             model.template, h.latent_lo, h.latent_hi)
    theta_step = step_from_index(h.theta_step)
    theta_q = decode_params(stream.sections["theta"], n_theta, h.theta_std, theta_step)
    theta_hat = unflatten_params(dequantize(theta_q, theta_step), theta_tpl, np.float32)

    masks = None
    weights = None
    tau = stream.sections["tau"]
    if model.arch.mode == "full":
        n = model.net.n_weights
        if not 0 < h.k_active <= n:
            raise DecodeError(f"active count {h.k_active} outside (0, {n}]")
        bits = decode_mask(tau, n, h.k_active)
        if int(bits.sum()) != h.k_active:
            raise DecodeError("decoded mask does not match the header's active count")
        masks = [m.astype(bool) for m in _split(model.net.w0, bits)]
        weights = masks
    elif model.arch.mode == "dense_trained":
        if len(tau) < 5 + range_preamble_bits() // 8:
            raise DecodeError("weight section too short")
        w_step = step_from_index(tau[0])
        w_std = float(np.frombuffer(tau[1:5], dtype=np.float32)[0])
        n = model.net.n_weights
        w_q = decode_params(tau[5:], n, w_std, w_step)
        weights = [w.astype(np.float32) for w in _split(model.net.w0, dequantize(w_q, w_step))]
    return model, latents, theta_hat, masks, weights


def _synth_weights(model, masks, weights, sparse: bool):
    mode = model.arch.mode
    if mode == "full":
        if sparse:
            # Keep only active entries; multiplies by masked weights are skipped.
            from scipy import sparse as sp

            return [sp.csr_matrix(np.where(m, w, 0).astype(w.dtype)) for w, m in zip(model.net.w0, masks)]
        return model.net.effective_weights(masks)
    return weights


def decode_full(data: bytes, sparse: bool = False) -> DecodedImage:
    """Decode and also report MACs/pixel for the chosen evaluation path.

    The dense path multiplies by every synthesis weight (upper bound); the
    sparse path evaluates only active weights (lower bound).
    """
    try:
        model, latents, theta_hat, masks, weights = _decode(data)
        syn = _synth_weights(model, masks, weights, sparse)
        if sparse and model.arch.mode == "full":
            pixels = _synthesize_sparse(model, latents, theta_hat, syn)
        else:
            pixels = model.synthesize(latents, theta_hat, syn)
    except (BitstreamError, RangeDecodeError, UnstableConfigurationError, OverflowError) as exc:
        raise DecodeError(str(exc)) from exc
    except (ValueError, IndexError) as exc:
        if isinstance(exc, DecodeError):
            raise
        raise DecodeError(f"corrupt stream: {exc}") from exc
    macs = count_macs(model, masks)
    return DecodedImage(pixels, macs, model.arch.mode)


def _synthesize_sparse(model, latents, theta_hat, sparse_weights):
    from .modnet import modnet_forward, rewind_concat
    from .numcore import gelu

    lat = [np.asarray(z, dtype=model.dtype) for z in latents]
    u0 = model.upsampler.forward(lat)
    outputs, _ = modnet_forward(u0, theta_hat, model.height, model.width)
    mods = [rewind_concat(outputs, i) for i in (1, 2, 3)]
    f = model.coords
    n = len(sparse_weights)
    for i, w in enumerate(sparse_weights):
        g = f if i == 0 else np.concatenate([mods[i - 1], f], axis=0)
        a = np.asarray(w @ g, dtype=model.dtype)
        f = gelu(a) if i < n - 1 else np.tanh(a)
    rgb = 0.5 * (f + 1.0)
    return np.clip(rgb, 0.0, 1.0).reshape(3, model.height, model.width)


def decode_image(data: bytes, sparse: bool = False) -> np.ndarray:
    """``(3, H, W)`` reconstruction in ``[0, 1]``; raises :class:`DecodeError`."""
    return decode_full(data, sparse).pixels

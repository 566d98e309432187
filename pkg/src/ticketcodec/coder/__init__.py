"""Entropy coding stack and the ``.ltry`` container."""

from .bitstream import BitstreamError, CodecBitstream, Header
from .cdf import PRECISION, TOTAL, QuantizedCdf, cdf_from_pmf, quantize_cdf, uniform_cdf
from .latents import decode_latents, encode_latents, latent_bits_quantized, latent_bounds
from .mask import decode_mask, encode_mask, mask_bits_model
from .params import (
    compress_network_params,
    decode_params,
    param_bits_model,
    search_quantization_steps,
    step_from_index,
)
from .rangecoder import RangeDecodeError, RangeDecoder, RangeEncoder, range_decode, range_encode

__all__ = [
    "BitstreamError", "CodecBitstream", "Header",
    "PRECISION", "TOTAL", "QuantizedCdf", "cdf_from_pmf", "quantize_cdf", "uniform_cdf",
    "decode_latents", "encode_latents", "latent_bits_quantized", "latent_bounds",
    "decode_mask", "encode_mask", "mask_bits_model",
    "compress_network_params", "decode_params", "param_bits_model",
    "search_quantization_steps", "step_from_index",
    "RangeDecodeError", "RangeDecoder", "RangeEncoder", "range_decode", "range_encode",
]

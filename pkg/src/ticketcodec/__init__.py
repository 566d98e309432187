"""Overfitted image codec that transmits a binary mask over a seeded random network."""

from .decoder import DecodeError, decode_full, decode_image
from .encoder import EncoderConfig, RDRecord, ablation_encode, encode_image
from .imageio import read_image, write_image
from .metrics import bd_rate, psnr

__version__ = "0.1.0"

__all__ = [
    "DecodeError", "EncoderConfig", "RDRecord", "ablation_encode", "bd_rate", "decode_full",
    "decode_image", "encode_image", "psnr", "read_image", "write_image",
]

"""8-bit RGB image reading and writing (PNG through Pillow, binary PPM by hand)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .metrics import quantize_8bit


class UnsupportedImageError(ValueError):
    pass


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    while True:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        break
    start = pos
    while pos < len(buf) and not buf[pos:pos + 1].isspace():
        pos += 1
    return buf[start:pos], pos


def read_ppm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    magic, pos = _read_token(buf, 0)
    if magic != b"P6":
        raise UnsupportedImageError(f"{path}: only binary P6 PPM is supported")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise UnsupportedImageError(f"{path}: only 8-bit PPM (maxval 255) is supported")
    pos += 1  # single whitespace before the raster
    raster = np.frombuffer(buf, dtype=np.uint8, count=width * height * 3, offset=pos)
    return raster.reshape(height, width, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def write_ppm(pixels, path) -> None:
    q = quantize_8bit(pixels)
    _, h, w = q.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + q.transpose(1, 2, 0).tobytes())


def read_image(path) -> np.ndarray:
    """``(3, H, W)`` float array in ``[0, 1]`` from an 8-bit RGB PNG or PPM."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".ppm", ".pnm"):
        return read_ppm(path)
    if suffix != ".png":
        raise UnsupportedImageError(f"{path}: unsupported image format {suffix!r}")
    from PIL import Image

    with Image.open(path) as im:
        if im.mode not in ("RGB", "RGBA", "L", "P"):
            raise UnsupportedImageError(f"{path}: unsupported PNG mode {im.mode}")
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def write_image(pixels, path) -> None:
    path = Path(path)
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[0] != 3:
        raise ValueError(f"expected a 3 x H x W array, got {pixels.shape}")
    suffix = path.suffix.lower()
    if suffix in (".ppm", ".pnm"):
        write_ppm(pixels, path)
        return
    if suffix != ".png":
        raise UnsupportedImageError(f"{path}: unsupported image format {suffix!r}")
    from PIL import Image

    Image.fromarray(quantize_8bit(pixels).transpose(1, 2, 0), "RGB").save(path)

"""The ``.ltry`` container: fixed header, four length-prefixed sections, CRC32.

All integers are little-endian. Layout::

    magic        4s   b"LTRY"
    version      u8   1
    height       u16
    width        u16
    seed         u64
    mask_ratio   f32
    mode         u8   0 = full, 1 = modnet_only, 2 = dense_trained
    d            u8   ModNet width
    c            u8   ARM context size
    n_levels     u8   latent levels L
    n_residual   u8   3x3 residual convs (0 = base variant)
    phases       u16  Fourier phase count
    freqs        u16  Fourier frequency count
    n_hidden     u8   followed by n_hidden x u16 hidden widths
    latent_lo    L x i16
    latent_hi    L x i16
    theta_step   u8   exponent k of the ModNet step 2^-k
    psi_step     u8   exponent k of the ARM step 2^-k
    theta_std    f32
    psi_std      f32
    k_active     u32  number of ones in the mask
    sections     psi, z, theta, tau; each u32 byte length + payload
                 (tau: coded mask in mode 0, empty in mode 1, and in mode 2
                 u8 step exponent + f32 std + coded dense weights)
    crc32        u32  over every preceding byte
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

MAGIC = b"LTRY"
VERSION = 1
SECTION_ORDER = ("psi", "z", "theta", "tau")

_FIXED = struct.Struct("<4sBHHQfBBBBBHHB")
_TAIL = struct.Struct("<BBffI")
_U32 = struct.Struct("<I")


class BitstreamError(ValueError):
    """Malformed, truncated or corrupted container."""


@dataclass
class Header:
    height: int
    width: int
    seed: int
    mask_ratio: float
    d: int
    c: int
    n_levels: int
    n_residual: int
    phases: int
    freqs: int
    hidden_dims: tuple
    latent_lo: tuple
    latent_hi: tuple
    theta_step: int
    psi_step: int
    theta_std: float
    psi_std: float
    k_active: int
    mode: int = 0
    version: int = VERSION

    def pack(self) -> bytes:
        if len(self.latent_lo) != self.n_levels or len(self.latent_hi) != self.n_levels:
            raise ValueError("latent bounds must have one entry per level")
        out = _FIXED.pack(
            MAGIC, self.version, self.height, self.width, self.seed, self.mask_ratio,
            self.mode, self.d, self.c, self.n_levels, self.n_residual,
            self.phases, self.freqs, len(self.hidden_dims),
        )
        out += struct.pack(f"<{len(self.hidden_dims)}H", *self.hidden_dims)
        out += struct.pack(f"<{self.n_levels}h", *self.latent_lo)
        out += struct.pack(f"<{self.n_levels}h", *self.latent_hi)
        out += _TAIL.pack(self.theta_step, self.psi_step, self.theta_std, self.psi_std, self.k_active)
        return out

    @classmethod
    def unpack(cls, data: bytes) -> tuple["Header", int]:
        try:
            (magic, version, h, w, seed, ratio, mode, d, c, n_levels, n_res,
             phases, freqs, n_hidden) = _FIXED.unpack_from(data, 0)
        except struct.error as exc:
            raise BitstreamError("stream shorter than the fixed header") from exc
        if magic != MAGIC:
            raise BitstreamError(f"bad magic {magic!r}")
        if version != VERSION:
            raise BitstreamError(f"unsupported version {version}")
        off = _FIXED.size
        try:
            hidden = struct.unpack_from(f"<{n_hidden}H", data, off)
            off += 2 * n_hidden
            lo = struct.unpack_from(f"<{n_levels}h", data, off)
            off += 2 * n_levels
            hi = struct.unpack_from(f"<{n_levels}h", data, off)
            off += 2 * n_levels
            t_step, p_step, t_std, p_std, k = _TAIL.unpack_from(data, off)
        except struct.error as exc:
            raise BitstreamError("truncated header") from exc
        off += _TAIL.size
        header = cls(h, w, seed, ratio, d, c, n_levels, n_res, phases, freqs, tuple(hidden),
                     tuple(lo), tuple(hi), t_step, p_step, t_std, p_std, k, mode, version)
        return header, off


@dataclass
class CodecBitstream:
    header: Header
    sections: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        out = bytearray(self.header.pack())
        for name in SECTION_ORDER:
            payload = self.sections.get(name, b"")
            out += _U32.pack(len(payload)) + payload
        out += _U32.pack(zlib.crc32(bytes(out)))
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CodecBitstream":
        data = bytes(data)
        if len(data) < 4:
            raise BitstreamError("stream too short")
        (crc,) = _U32.unpack_from(data, len(data) - 4)
        header, off = Header.unpack(data[:-4])
        sections = {}
        for name in SECTION_ORDER:
            if off + 4 > len(data) - 4:
                raise BitstreamError(f"truncated before section {name!r}")
            (n,) = _U32.unpack_from(data, off)
            off += 4
            if off + n > len(data) - 4:
                raise BitstreamError(f"section {name!r} length {n} exceeds the stream")
            sections[name] = data[off:off + n]
            off += n
        if off != len(data) - 4:
            raise BitstreamError(f"{len(data) - 4 - off} unexpected trailing bytes")
        if zlib.crc32(data[:-4]) != crc:
            raise BitstreamError("CRC mismatch")
        return cls(header, sections)

    def section_bits(self) -> dict:
        return {k: 8 * len(v) for k, v in self.sections.items()}

    def total_bits(self) -> int:
        return 8 * len(self.to_bytes())

    def overhead_bits(self) -> int:
        """Bits outside the four section payloads (header, length prefixes, CRC)."""
        return self.total_bits() - sum(self.section_bits().values())

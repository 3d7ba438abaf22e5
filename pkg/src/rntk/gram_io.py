"""Binary and CSV serialization of kernel Gram matrices.

Binary layout: 8-byte magic "RNTKGRAM", then a little-endian header
(u32 version=1, u32 N rows, u32 M cols, u8 kind, u8 variant, u16 reserved),
then N*M little-endian float64 values in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .kernels import Arch, InputOrder, Variant

MAGIC = b"RNTKGRAM"
VERSION = 1
_HEADER = struct.Struct("<IIIBBH")

KIND_CK = 0
KIND_NTK = 1

_ARCH_CODE = {Arch.RNN: 0, Arch.BI_RNN: 1, Arch.RNN_AVG: 2, Arch.BI_RNN_AVG: 3}
_CODE_ARCH = {v: k for k, v in _ARCH_CODE.items()}
_FLIP_BIT = 0x10


class GramFormatError(ValueError):
    """File is not a valid serialized Gram matrix."""


def variant_code(variant: Variant) -> int:
    code = _ARCH_CODE[variant.arch]
    if variant.input_order is InputOrder.FLIPPED:
        code |= _FLIP_BIT
    return code


def variant_from_code(code: int) -> Variant:
    arch = _CODE_ARCH.get(code & 0x0F)
    if arch is None:
        raise GramFormatError(f"unknown variant code {code}")
    order = InputOrder.FLIPPED if code & _FLIP_BIT else InputOrder.DEFAULT
    return Variant(arch, order)


def write_gram(path, matrix: np.ndarray, kind: int, variant: Variant) -> None:
    """Write one matrix to the binary Gram format."""
    mat = np.asarray(matrix, dtype=np.float64)
    if mat.ndim != 2:
        raise GramFormatError(f"expected a 2-D matrix, got ndim={mat.ndim}")
    if kind not in (KIND_CK, KIND_NTK):
        raise GramFormatError(f"kind must be {KIND_CK} (CK) or {KIND_NTK} (NTK)")
    n, m = mat.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(VERSION, n, m, kind, variant_code(variant), 0))
        fh.write(np.ascontiguousarray(mat).astype("<f8", copy=False).tobytes())


def read_gram(path) -> tuple[np.ndarray, int, Variant]:
    """Read a binary Gram file; returns (matrix, kind, variant)."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + _HEADER.size:
        raise GramFormatError(f"{path}: truncated header")
    if raw[: len(MAGIC)] != MAGIC:
        raise GramFormatError(f"{path}: bad magic bytes")
    version, n, m, kind, vcode, _ = _HEADER.unpack_from(raw, len(MAGIC))
    if version != VERSION:
        raise GramFormatError(f"{path}: unsupported version {version}")
    if kind not in (KIND_CK, KIND_NTK):
        raise GramFormatError(f"{path}: unknown kind {kind}")
    start = len(MAGIC) + _HEADER.size
    expected = n * m * 8
    if len(raw) != start + expected:
        raise GramFormatError(
            f"{path}: payload is {len(raw) - start} bytes, expected {expected}")
    mat = np.frombuffer(raw, dtype="<f8", offset=start).reshape(n, m).copy()
    return mat, kind, variant_from_code(vcode)


def write_gram_csv(path, matrix: np.ndarray) -> None:
    """Plain CSV writer for small matrices (one row per line, full precision)."""
    mat = np.asarray(matrix, dtype=np.float64)
    if mat.ndim != 2:
        raise GramFormatError(f"expected a 2-D matrix, got ndim={mat.ndim}")
    np.savetxt(path, mat, delimiter=",", fmt="%.17g")

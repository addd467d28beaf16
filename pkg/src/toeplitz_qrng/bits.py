"""Packed bit vectors and GF(2) primitives.

Every bit stream in the package uses one wire format: raw bytes with
LSB-first bit order, so bit ``i`` of a stream lives at bit ``i % 8`` of
byte ``i // 8``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

#: Drops the two most significant bits and the least significant bit of an
#: 8-bit ADC code, keeping bit positions 5..1.
DEFAULT_KEEP_MASK = 0b0011_1110


@dataclass(frozen=True)
class BitBlock:
    """Immutable packed bit vector.

    ``data`` holds ``ceil(length / 8)`` bytes; unused bits of the final
    byte are always zero.
    """

    data: bytes
    length: int

    def __post_init__(self):
        if self.length < 0:
            raise ValueError("length must be non-negative")
        if len(self.data) != (self.length + 7) // 8:
            raise ValueError(
                f"{len(self.data)} bytes cannot hold exactly {self.length} bits"
            )
        tail = self.length % 8
        if tail and self.data[-1] >> tail:
            raise ValueError("bits beyond length must be zero")

    @classmethod
    def from_bits(cls, bits: Iterable[int] | np.ndarray | str) -> "BitBlock":
        if isinstance(bits, str):
            bits = [int(c) for c in bits if c in "01"]
        arr = np.asarray(bits, dtype=np.uint8).ravel()
        if arr.size and arr.max() > 1:
            raise ValueError("bits must be 0 or 1")
        return cls(pack_bits(arr), int(arr.size))

    @classmethod
    def zeros(cls, length: int) -> "BitBlock":
        return cls(bytes((length + 7) // 8), length)

    def to_array(self) -> np.ndarray:
        return unpack_bits(self.data, self.length)

    def __len__(self) -> int:
        return self.length

    def __getitem__(self, i: int) -> int:
        if not -self.length <= i < self.length:
            raise IndexError(i)
        i %= self.length
        return (self.data[i >> 3] >> (i & 7)) & 1

    def __str__(self) -> str:
        return "".join(map(str, self.to_array()))


def pack_bits(bits: np.ndarray) -> bytes:
    """Pack a 0/1 array into LSB-first bytes."""
    return np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little").tobytes()


def unpack_bits(data: bytes | np.ndarray, length: int | None = None) -> np.ndarray:
    buf = np.frombuffer(data, dtype=np.uint8) if isinstance(data, (bytes, bytearray, memoryview)) else np.asarray(data, dtype=np.uint8)
    if length is not None and length > 8 * buf.size:
        raise ValueError(f"{buf.size} bytes hold fewer than {length} bits")
    return np.unpackbits(buf, count=length, bitorder="little")


def xor_accumulate(acc: BitBlock, v: BitBlock) -> BitBlock:
    """Bitwise XOR of two equal-length blocks (addition over GF(2))."""
    if acc.length != v.length:
        raise ValueError(f"length mismatch: {acc.length} != {v.length}")
    a = np.frombuffer(acc.data, dtype=np.uint8)
    b = np.frombuffer(v.data, dtype=np.uint8)
    return BitBlock(np.bitwise_xor(a, b).tobytes(), acc.length)


def kept_positions(keep_mask: int) -> np.ndarray:
    """Bit positions selected by ``keep_mask``, most significant first."""
    if not 0 < keep_mask < 256:
        raise ValueError(f"keep_mask must be a nonzero 8-bit mask, got {keep_mask!r}")
    return np.array([p for p in range(7, -1, -1) if keep_mask >> p & 1], dtype=np.uint8)


def select_sample_bits(sample: int, keep_mask: int = DEFAULT_KEEP_MASK) -> BitBlock:
    """Bits of one ADC code that survive ``keep_mask``, MSB to LSB."""
    if not 0 <= sample <= 255:
        raise ValueError(f"sample {sample} does not fit in 8 bits")
    return BitBlock.from_bits([(sample >> p) & 1 for p in kept_positions(keep_mask)])


def select_bits_array(samples: np.ndarray, keep_mask: int = DEFAULT_KEEP_MASK) -> np.ndarray:
    """Vectorised :func:`select_sample_bits` over many samples.

    Returns a flat uint8 array of ``len(samples) * popcount(keep_mask)`` bits
    in sample order, each sample contributing its kept bits MSB first.
    """
    samples = np.asarray(samples, dtype=np.uint8)
    return _selection_table(keep_mask)[samples].ravel()


def _selection_table(keep_mask: int) -> np.ndarray:
    pos = kept_positions(keep_mask)
    codes = np.arange(256, dtype=np.uint8)[:, None]
    return ((codes >> pos[None, :]) & 1).astype(np.uint8)

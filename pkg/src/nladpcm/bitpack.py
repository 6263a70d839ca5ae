"""MSB-first packing of fixed-width integer codes."""

from __future__ import annotations

from typing import Sequence

import numpy as np


class TruncatedStreamError(ValueError):
    pass


def _to_bits(codes, bits_each: int) -> np.ndarray:
    c = np.asarray(codes, dtype=np.int64).reshape(-1)
    if not 1 <= bits_each <= 32:
        raise ValueError("bits_each must be in 1..32")
    if c.size and (c.min() < 0 or c.max() >= (1 << bits_each)):
        raise ValueError(f"code out of range for {bits_each} bits")
    shifts = np.arange(bits_each - 1, -1, -1, dtype=np.int64)
    return ((c[:, None] >> shifts) & 1).astype(np.uint8).reshape(-1)


def pack_codes(codes: Sequence[int], bits_each: int) -> bytes:
    """Pack codes MSB first; the last byte is zero padded."""
    return np.packbits(_to_bits(codes, bits_each)).tobytes()


def unpack_codes(data: bytes, bits_each: int, count: int) -> np.ndarray:
    reader = BitReader(data)
    return reader.read(bits_each, count)


class BitWriter:
    """Accumulates variable-width code runs into a single MSB-first payload."""

    def __init__(self):
        self._chunks: list[np.ndarray] = []
        self.bit_count = 0

    def write(self, codes, bits_each: int) -> None:
        b = _to_bits(codes, bits_each)
        self._chunks.append(b)
        self.bit_count += b.shape[0]

    def getvalue(self) -> bytes:
        if not self._chunks:
            return b""
        return np.packbits(np.concatenate(self._chunks)).tobytes()


class BitReader:
    def __init__(self, data: bytes):
        self._bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
        self.pos = 0

    @property
    def remaining(self) -> int:
        return self._bits.shape[0] - self.pos

    def read(self, bits_each: int, count: int) -> np.ndarray:
        need = bits_each * count
        if need > self.remaining:
            raise TruncatedStreamError(
                f"need {need} bits, only {self.remaining} left")
        chunk = self._bits[self.pos:self.pos + need].reshape(count, bits_each)
        self.pos += need
        weights = 1 << np.arange(bits_each - 1, -1, -1, dtype=np.int64)
        return chunk.astype(np.int64) @ weights

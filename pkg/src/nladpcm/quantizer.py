"""Residual and weight quantizers.

Two families live here:

* the multiplier-adapted mid-rise quantizer that codes the prediction error
  inside every ADPCM loop (2 to 5 bits per sample), and
* scalar codebooks for the MLP parameters, designed either uniformly over a
  clipped range or with equal cell occupancy, plus the per-group bit
  allocation and the codebook file format.
"""

from __future__ import annotations

import bisect
import enum
import io
import struct
import warnings
import zlib
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .mlp import GROUP_ORDER, GROUP_SIZES, GroupKind

STEP_MIN = 1e-5
STEP_MAX = 1.0
STEP_INIT = 0.02

_MULT_4 = (0.9, 0.9, 0.9, 0.9, 1.2, 1.6, 2.0, 2.4)
DEFAULT_MULTIPLIERS: dict[int, tuple[float, ...]] = {
    2: (0.8, 1.6),
    3: (0.9, 0.9, 1.25, 1.75),
    4: _MULT_4,
    5: tuple(m for m in _MULT_4 for _ in range(2)),
}

MAX_WEIGHT_BITS = 10


class QuantizerDesignError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Adaptive residual quantizer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdaptiveResidualQuantizer:
    """Nq-bit mid-rise quantizer whose step follows a multiplier table.

    The table is indexed by the magnitude level of the last code.
    """

    bits: int
    step: float = STEP_INIT
    step_min: float = STEP_MIN
    step_max: float = STEP_MAX
    multipliers: tuple[float, ...] | None = None

    def __post_init__(self):
        if not 2 <= self.bits <= 5:
            raise ValueError(f"residual bits must be in 2..5, got {self.bits}")
        mults = self.multipliers
        if mults is None:
            mults = DEFAULT_MULTIPLIERS[self.bits]
        mults = tuple(float(m) for m in mults)
        if len(mults) != 1 << (self.bits - 1):
            raise ValueError(f"need {1 << (self.bits - 1)} multipliers for {self.bits} bits")
        if min(mults) <= 0 or not (min(mults) < 1 < max(mults)):
            raise ValueError("multipliers must be positive with at least one < 1 and one > 1")
        if not 0 < self.step_min <= self.step_max:
            raise ValueError("need 0 < step_min <= step_max")
        if not self.step_min <= self.step <= self.step_max:
            raise ValueError("step outside [step_min, step_max]")
        object.__setattr__(self, "multipliers", mults)

    @property
    def levels(self) -> int:
        return 1 << (self.bits - 1)


def quantize_residual(error: float, step: float, top: int,
                      multipliers: Sequence[float], step_min: float,
                      step_max: float) -> tuple[int, float, float]:
    """Scalar kernel behind :func:`rq_quantize`; returns (code, recon, new step).

    ``top`` is the largest magnitude index, ``2**(bits-1) - 1``.
    """
    m = int(abs(error) / step)
    if m > top:
        m = top
    recon = (m + 0.5) * step
    if error < 0:
        code = 2 * m + 1
        recon = -recon
    else:
        code = 2 * m
    new_step = step * multipliers[m]
    if new_step < step_min:
        new_step = step_min
    elif new_step > step_max:
        new_step = step_max
    return code, recon, new_step


def dequantize_residual(code: int, step: float, multipliers: Sequence[float],
                        step_min: float, step_max: float) -> tuple[float, float]:
    m = code >> 1
    recon = (m + 0.5) * step
    if code & 1:
        recon = -recon
    new_step = step * multipliers[m]
    if new_step < step_min:
        new_step = step_min
    elif new_step > step_max:
        new_step = step_max
    return recon, new_step


def rq_quantize(q: AdaptiveResidualQuantizer, error: float
                ) -> tuple[int, float, AdaptiveResidualQuantizer]:
    code, recon, step = quantize_residual(error, q.step, q.levels - 1, q.multipliers,
                                          q.step_min, q.step_max)
    return code, recon, replace(q, step=step)


def rq_dequantize(q: AdaptiveResidualQuantizer, code: int
                  ) -> tuple[float, AdaptiveResidualQuantizer]:
    if not 0 <= code < (1 << q.bits):
        raise ValueError(f"code {code} out of range for {q.bits} bits")
    recon, step = dequantize_residual(code, q.step, q.multipliers, q.step_min, q.step_max)
    return recon, replace(q, step=step)


# ---------------------------------------------------------------------------
# Weight quantizers
# ---------------------------------------------------------------------------

class QuantizerKind(enum.IntEnum):
    UNIFORM = 0
    EQUAL_OCCUPANCY = 1


@dataclass(frozen=True, eq=False)
class WeightQuantizer:
    kind: QuantizerKind
    bits: int
    thresholds: np.ndarray
    levels: np.ndarray
    # number of thresholds nudged apart because repeated samples made them coincide
    collisions: int = 0

    def __post_init__(self):
        t = np.array(self.thresholds, dtype=np.float64).reshape(-1)
        lv = np.array(self.levels, dtype=np.float64).reshape(-1)
        if not 1 <= self.bits <= 16:
            raise ValueError("weight quantizer bits out of range")
        if lv.shape[0] != 1 << self.bits or t.shape[0] != lv.shape[0] - 1:
            raise ValueError("thresholds/levels do not match bit count")
        if np.any(np.diff(t) <= 0) or np.any(np.diff(lv) <= 0):
            raise ValueError("thresholds and levels must be strictly increasing")
        if np.any(lv[:-1] > t) or np.any(t > lv[1:]):
            raise ValueError("levels must interleave thresholds")
        t.setflags(write=False)
        lv.setflags(write=False)
        object.__setattr__(self, "kind", QuantizerKind(self.kind))
        object.__setattr__(self, "thresholds", t)
        object.__setattr__(self, "levels", lv)
        object.__setattr__(self, "_tlist", t.tolist())

    def __eq__(self, other):
        if not isinstance(other, WeightQuantizer):
            return NotImplemented
        return (self.kind == other.kind and self.bits == other.bits
                and np.array_equal(self.thresholds, other.thresholds)
                and np.array_equal(self.levels, other.levels))

    def encode(self, value: float) -> int:
        return bisect.bisect_right(self._tlist, value)

    def decode(self, code: int) -> float:
        if not 0 <= code < self.levels.shape[0]:
            raise ValueError(f"code {code} out of range for {self.bits} bits")
        return float(self.levels[code])

    def encode_array(self, values) -> np.ndarray:
        return np.searchsorted(self.thresholds, np.asarray(values, dtype=np.float64),
                               side="right")

    def decode_array(self, codes) -> np.ndarray:
        codes = np.asarray(codes)
        if codes.size and (codes.min() < 0 or codes.max() >= self.levels.shape[0]):
            raise ValueError("code out of range")
        return self.levels[codes]


def wq_encode(q: WeightQuantizer, value: float) -> int:
    return q.encode(value)


def wq_decode(q: WeightQuantizer, code: int) -> float:
    return q.decode(code)


def _sorted(samples) -> np.ndarray:
    s = np.sort(np.asarray(samples, dtype=np.float64).reshape(-1))
    if s.size == 0 or not np.all(np.isfinite(s)):
        raise QuantizerDesignError("need a non-empty set of finite samples")
    return s


def design_uniform(samples, bits: int, clip_fraction: float = 0.0) -> WeightQuantizer:
    """Uniform codebook over the central ``1 - clip_fraction`` of the data.

    Values outside ``[lo, hi]`` saturate to the outer levels.
    """
    if not 0 <= clip_fraction < 1:
        raise ValueError("clip_fraction must lie in [0, 1)")
    s = _sorted(samples)
    if s[0] == s[-1]:
        raise QuantizerDesignError("degenerate samples: all values are equal")
    lo, hi = np.quantile(s, [clip_fraction / 2, 1 - clip_fraction / 2])
    if not hi > lo:
        raise QuantizerDesignError("clipped range is empty")
    cells = 1 << bits
    edges = lo + (hi - lo) * np.arange(cells + 1) / cells
    levels = 0.5 * (edges[:-1] + edges[1:])
    return WeightQuantizer(QuantizerKind.UNIFORM, bits, edges[1:-1], levels)


def design_equal_occupancy(samples, bits: int) -> WeightQuantizer:
    """Non-uniform codebook whose cells hold equal shares of the samples.

    Thresholds sit halfway between the sorted samples at the cell
    boundaries, so with distinct values each cell receives either
    ``floor(N / 2**bits)`` or ``ceil(N / 2**bits)`` samples. Each level is
    the mean of its cell.
    """
    s = _sorted(samples)
    n = s.shape[0]
    cells = 1 << bits
    distinct = np.count_nonzero(np.diff(s)) + 1
    if distinct < cells:
        raise QuantizerDesignError(
            f"too few distinct values: {distinct} for {cells} cells ({bits} bits)")

    cuts = (np.arange(1, cells) * n) // cells
    thresholds = 0.5 * (s[cuts - 1] + s[cuts])
    collisions = 0
    for i in range(1, thresholds.shape[0]):
        if thresholds[i] <= thresholds[i - 1]:
            thresholds[i] = np.nextafter(thresholds[i - 1], np.inf)
            collisions += 1
    if collisions:
        warnings.warn(f"{collisions} equal-occupancy thresholds separated due to ties",
                      stacklevel=2)

    codes = np.searchsorted(thresholds, s, side="right")
    counts = np.bincount(codes, minlength=cells)
    sums = np.bincount(codes, weights=s, minlength=cells)
    levels = np.empty(cells)
    filled = counts > 0
    levels[filled] = sums[filled] / counts[filled]
    # empty cells (only possible with ties) sit on their lower edge
    for i in np.flatnonzero(~filled):
        levels[i] = thresholds[i - 1] if i > 0 else np.nextafter(thresholds[0], -np.inf)
    # a cell mean can round onto its upper threshold; keep the strict ordering
    for i in range(cells - 1):
        if levels[i] >= thresholds[i]:
            levels[i] = np.nextafter(thresholds[i], -np.inf)
    return WeightQuantizer(QuantizerKind.EQUAL_OCCUPANCY, bits, thresholds, levels,
                           collisions=collisions)


def design_quantizer(samples, kind: QuantizerKind, bits: int,
                     clip_fraction: float = 0.0) -> WeightQuantizer:
    if QuantizerKind(kind) is QuantizerKind.UNIFORM:
        return design_uniform(samples, bits, clip_fraction)
    return design_equal_occupancy(samples, bits)


# ---------------------------------------------------------------------------
# Bit allocation and codebook banks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BitAllocation:
    hidden_weights_bits: int = 10
    hidden_bias_bits: int = 10
    output_weights_bits: int = 10
    output_bias_bits: int = 10

    def __post_init__(self):
        for b in self.as_tuple():
            if not isinstance(b, (int, np.integer)) or not 1 <= b <= MAX_WEIGHT_BITS:
                raise ValueError(f"allocation bits must be integers in 1..{MAX_WEIGHT_BITS}")

    @classmethod
    def uniform(cls, bits: int) -> "BitAllocation":
        return cls(bits, bits, bits, bits)

    @classmethod
    def parse(cls, text: str) -> "BitAllocation":
        """Parse ``"7 10 7 10"`` / ``"7-10-7-10"`` / ``"7:10:7:10"``."""
        parts = text.replace("-", " ").replace(":", " ").replace("/", " ").split()
        if len(parts) == 1:
            return cls.uniform(int(parts[0]))
        if len(parts) != 4:
            raise ValueError(f"allocation needs 4 fields, got {text!r}")
        return cls(*(int(p) for p in parts))

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.hidden_weights_bits, self.hidden_bias_bits,
                self.output_weights_bits, self.output_bias_bits)

    def bits_for(self, kind: GroupKind) -> int:
        return self.as_tuple()[GROUP_ORDER.index(kind)]

    def bits_per_frame(self) -> int:
        return sum(GROUP_SIZES[k] * b for k, b in zip(GROUP_ORDER, self.as_tuple()))

    def __str__(self) -> str:
        return "-".join(str(b) for b in self.as_tuple())


def allocation_bits_per_frame(a: BitAllocation) -> int:
    return a.bits_per_frame()


CODEBOOK_MAGIC = b"NLWQ"
CODEBOOK_VERSION = 1


@dataclass(frozen=True)
class WeightQuantizerBank:
    """One weight quantizer per parameter group."""

    quantizers: Mapping[GroupKind, WeightQuantizer]

    def __post_init__(self):
        if set(self.quantizers) != set(GROUP_ORDER):
            raise ValueError("bank needs exactly one quantizer per parameter group")
        object.__setattr__(self, "quantizers",
                           {k: self.quantizers[k] for k in GROUP_ORDER})

    def __getitem__(self, kind: GroupKind) -> WeightQuantizer:
        return self.quantizers[kind]

    @property
    def allocation(self) -> BitAllocation:
        return BitAllocation(*(self.quantizers[k].bits for k in GROUP_ORDER))

    def matches(self, allocation: BitAllocation) -> bool:
        return self.allocation == allocation

    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(CODEBOOK_MAGIC)
        out.write(struct.pack("<B", CODEBOOK_VERSION))
        for kind in GROUP_ORDER:
            q = self.quantizers[kind]
            out.write(struct.pack("<BBB", int(kind), int(q.kind), q.bits))
            for arr in (q.thresholds, q.levels):
                out.write(struct.pack("<I", arr.shape[0]))
                out.write(arr.astype("<f8").tobytes())
        return out.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "WeightQuantizerBank":
        buf = memoryview(data)
        if bytes(buf[:4]) != CODEBOOK_MAGIC:
            raise ValueError("not a codebook file (bad magic)")
        if len(buf) < 5 or buf[4] != CODEBOOK_VERSION:
            raise ValueError("unsupported codebook version")
        pos = 5
        quantizers = {}
        try:
            for expected in GROUP_ORDER:
                group, qkind, bits = struct.unpack_from("<BBB", buf, pos)
                pos += 3
                if group != int(expected):
                    raise ValueError("codebook records out of order")
                arrays = []
                for _ in range(2):
                    (count,) = struct.unpack_from("<I", buf, pos)
                    pos += 4
                    arrays.append(np.frombuffer(buf[pos:pos + 8 * count], dtype="<f8",
                                                count=count).astype(np.float64))
                    pos += 8 * count
                quantizers[expected] = WeightQuantizer(QuantizerKind(qkind), bits, *arrays)
        except struct.error as exc:
            raise ValueError("truncated codebook file") from exc
        if pos != len(buf):
            raise ValueError("trailing bytes in codebook file")
        return cls(quantizers)

    def checksum(self) -> int:
        return zlib.crc32(self.to_bytes())

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "WeightQuantizerBank":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    @classmethod
    def combine(cls, banks: Mapping[int, "WeightQuantizerBank"],
                allocation: BitAllocation) -> "WeightQuantizerBank":
        """Assemble a bank for ``allocation`` from single-rate banks keyed by bits."""
        return cls({k: banks[allocation.bits_for(k)][k] for k in GROUP_ORDER})


def design_bank(pools: Mapping[GroupKind, np.ndarray], allocation: BitAllocation,
                kind: QuantizerKind = QuantizerKind.EQUAL_OCCUPANCY,
                clip_fraction: float = 0.0) -> WeightQuantizerBank:
    return WeightQuantizerBank({
        g: design_quantizer(pools[g], kind, allocation.bits_for(g), clip_fraction)
        for g in GROUP_ORDER
    })

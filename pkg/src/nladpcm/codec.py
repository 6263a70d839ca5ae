"""ADPCM encoder and decoder for the four prediction schemes.

``BACKWARD_LMS``
    order-P linear predictor adapted every sample by leaky normalized LMS.
``BACKWARD_LD``
    order-P LPC recomputed at each frame start from the previous frame's
    reconstruction (Levinson-Durbin), optionally bandwidth expanded.
``BACKWARD_NL``
    10-2-1 MLP retrained every ``nl_update_period`` samples on the last
    ``frame_len`` reconstructed samples.
``FORWARD_NL``
    MLP trained on each original frame; its parameters are scalar quantized
    and sent ahead of the frame's residual codes. The encoder predicts with
    the dequantized net so the decoder sees exactly the same predictor.

Encoder and decoder share one sample loop (:func:`_run`); the only
difference is whether residual codes come from the quantizer or from the
stream. That is what keeps the two bit-exact.
"""

from __future__ import annotations

import enum
import math
import struct
import zlib
from dataclasses import dataclass, field, replace
from operator import mul
from typing import NamedTuple, Sequence

import numpy as np

from .bitpack import BitReader, BitWriter, TruncatedStreamError
from .lpc import lpc_from_window
from .mlp import (GROUP_ORDER, GROUP_SIZES, N_INPUTS, MlpPredictor, ParamGroup, TrainConfig,
                  merge_groups, split_groups, train_on_frame)
from .quantizer import (DEFAULT_MULTIPLIERS, STEP_INIT, STEP_MAX, STEP_MIN, BitAllocation,
                        WeightQuantizerBank, dequantize_residual, quantize_residual)
from .signal_io import DEFAULT_SAMPLE_RATE, PcmSignal, frames

STREAM_MAGIC = b"ADPX"
STREAM_VERSION = 1
_HEADER = struct.Struct("<4sBBBHBHH4BIII")
HEADER_BYTES = _HEADER.size


class CodecError(ValueError):
    pass


class CodebookMismatchError(CodecError):
    pass


class Scheme(enum.IntEnum):
    BACKWARD_LMS = 0
    BACKWARD_LD = 1
    BACKWARD_NL = 2
    FORWARD_NL = 3

    @classmethod
    def parse(cls, text: str) -> "Scheme":
        key = text.strip().lower().replace("_", "-")
        aliases = {
            "backward-lms": cls.BACKWARD_LMS, "lms": cls.BACKWARD_LMS,
            "backwardlms": cls.BACKWARD_LMS,
            "backward-ld": cls.BACKWARD_LD, "ld": cls.BACKWARD_LD,
            "backwardld": cls.BACKWARD_LD,
            "backward-nl": cls.BACKWARD_NL, "bnl": cls.BACKWARD_NL,
            "backwardnl": cls.BACKWARD_NL,
            "forward-nl": cls.FORWARD_NL, "fnl": cls.FORWARD_NL,
            "forwardnl": cls.FORWARD_NL,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown scheme {text!r}") from None

    @property
    def label(self) -> str:
        return self.name.lower().replace("_", "-")

    @property
    def is_nonlinear(self) -> bool:
        return self in (Scheme.BACKWARD_NL, Scheme.FORWARD_NL)


class WeightMode(enum.Enum):
    """Which MLP the ForwardNl encoder runs in its own loop.

    ``QUANTIZED`` is the real codec. ``MISMATCHED`` predicts with the
    unquantized net while still sending quantized codes, so the decoder
    drifts. ``UNQUANTIZED`` is an ablation whose local reconstruction
    assumes the decoder had the float weights.
    """

    QUANTIZED = "quantized"
    MISMATCHED = "mismatched"
    UNQUANTIZED = "unquantized"


@dataclass(frozen=True)
class CodecConfig:
    scheme: Scheme = Scheme.BACKWARD_LD
    nq: int = 4
    frame_len: int = 200
    order: int = 10
    lam: float = 1.0
    nl_update_period: int | None = None
    allocation: BitAllocation = field(default_factory=BitAllocation)
    train: TrainConfig = field(default_factory=TrainConfig)
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE
    lms_step: float = 0.05
    lms_leakage: float = 0.9999
    lms_epsilon: float = 1e-6
    step_init: float = STEP_INIT
    step_min: float = STEP_MIN
    step_max: float = STEP_MAX
    multipliers: tuple[float, ...] | None = None

    def __post_init__(self):
        scheme = Scheme(self.scheme)
        object.__setattr__(self, "scheme", scheme)
        if not isinstance(self.nq, (int, np.integer)) or not 2 <= self.nq <= 5:
            raise ValueError(f"nq must be an integer in 2..5, got {self.nq}")
        if not 1 <= self.frame_len <= 0xFFFF:
            raise ValueError("frame_len must be in 1..65535")
        if scheme.is_nonlinear:
            object.__setattr__(self, "order", N_INPUTS)
        elif not 1 <= self.order <= 255:
            raise ValueError("order must be in 1..255")
        if not 0 < self.lam <= 1:
            raise ValueError("lambda must lie in (0, 1]")
        # the stream carries lambda as round(lambda * 10000)
        object.__setattr__(self, "lam", round(self.lam * 10000) / 10000)
        if scheme is not Scheme.BACKWARD_LD:
            object.__setattr__(self, "lam", 1.0)
        period = self.nl_update_period
        if scheme is Scheme.BACKWARD_NL:
            period = self.frame_len if period is None else int(period)
            if not 1 <= period <= 0xFFFF:
                raise ValueError("nl_update_period must be in 1..65535")
        else:
            period = None
        object.__setattr__(self, "nl_update_period", period)
        if not isinstance(self.allocation, BitAllocation):
            object.__setattr__(self, "allocation", BitAllocation(*self.allocation))
        if not 0 < self.sample_rate_hz < 2 ** 32:
            raise ValueError("sample_rate_hz out of range")
        if not (self.lms_step > 0 and 0 < self.lms_leakage <= 1 and self.lms_epsilon > 0):
            raise ValueError("invalid LMS parameters")
        mults = self.multipliers
        mults = DEFAULT_MULTIPLIERS[self.nq] if mults is None else tuple(float(m) for m in mults)
        if len(mults) != 1 << (self.nq - 1):
            raise ValueError(f"need {1 << (self.nq - 1)} multipliers for nq={self.nq}")
        object.__setattr__(self, "multipliers", mults)
        if not 0 < self.step_min <= self.step_init <= self.step_max:
            raise ValueError("need 0 < step_min <= step_init <= step_max")

    @property
    def param_bits_per_frame(self) -> int:
        if self.scheme is Scheme.FORWARD_NL:
            return self.allocation.bits_per_frame()
        return 0

    def payload_bits(self, n_samples: int) -> int:
        n_frames = -(-n_samples // self.frame_len)
        return n_frames * self.param_bits_per_frame + n_samples * self.nq

    def tuning_bytes(self) -> bytes:
        """Decoder-relevant settings that the stream header does not carry."""
        parts = [struct.pack("<3d", self.step_init, self.step_min, self.step_max),
                 struct.pack(f"<{len(self.multipliers)}d", *self.multipliers)]
        if self.scheme is Scheme.BACKWARD_LMS:
            parts.append(struct.pack("<3d", self.lms_step, self.lms_leakage, self.lms_epsilon))
        if self.scheme is Scheme.BACKWARD_NL:
            t = self.train
            parts.append(struct.pack("<Iddq", t.epochs, t.learn_rate, t.init_scale, t.seed))
        return b"".join(parts)

    def with_header(self, other: "CodecConfig") -> "CodecConfig":
        """Copy the stream-header fields of ``other`` onto this config."""
        return replace(self, scheme=other.scheme, nq=other.nq, frame_len=other.frame_len,
                       order=other.order, lam=other.lam,
                       nl_update_period=other.nl_update_period,
                       allocation=other.allocation, sample_rate_hz=other.sample_rate_hz,
                       multipliers=None if self.nq != other.nq else self.multipliers)


def side_checksum(config: CodecConfig, codebooks: WeightQuantizerBank | None) -> int:
    data = config.tuning_bytes()
    if config.scheme is Scheme.FORWARD_NL and codebooks is not None:
        data += codebooks.to_bytes()
    return zlib.crc32(data)


@dataclass(eq=False)
class Bitstream:
    config: CodecConfig
    sample_count: int
    checksum: int
    residual_codes: np.ndarray
    param_codes: list[np.ndarray] = field(default_factory=list)

    @property
    def payload_bits(self) -> int:
        return self.config.payload_bits(self.sample_count)

    def header_bytes(self) -> bytes:
        c = self.config
        forward = c.scheme is Scheme.FORWARD_NL
        alloc = c.allocation.as_tuple() if forward else (0, 0, 0, 0)
        return _HEADER.pack(STREAM_MAGIC, STREAM_VERSION, int(c.scheme), c.nq, c.frame_len,
                            c.order, round(c.lam * 10000), c.nl_update_period or 0, *alloc,
                            c.sample_rate_hz, self.sample_count, self.checksum)

    def payload(self) -> bytes:
        c = self.config
        w = BitWriter()
        forward = c.scheme is Scheme.FORWARD_NL
        for i, fr in enumerate(frames(self.sample_count, c.frame_len)):
            if forward:
                _write_param_codes(w, self.param_codes[i], c.allocation)
            w.write(self.residual_codes[fr.slice()], c.nq)
        return w.getvalue()

    def to_bytes(self) -> bytes:
        return self.header_bytes() + self.payload()

    @classmethod
    def from_bytes(cls, data: bytes, base: CodecConfig | None = None) -> "Bitstream":
        """Parse a stream. Non-header settings are taken from ``base``."""
        if len(data) < HEADER_BYTES:
            raise CodecError("truncated stream header")
        (magic, version, scheme, nq, frame_len, order, lam, period, a0, a1, a2, a3,
         rate, count, checksum) = _HEADER.unpack_from(data)
        if magic != STREAM_MAGIC:
            raise CodecError("not an ADPX bitstream (bad magic)")
        if version != STREAM_VERSION:
            raise CodecError(f"unsupported stream version {version}")
        try:
            scheme = Scheme(scheme)
            header = CodecConfig(
                scheme=scheme, nq=nq, frame_len=frame_len, order=order, lam=lam / 10000,
                nl_update_period=period or None,
                allocation=BitAllocation(a0, a1, a2, a3) if scheme is Scheme.FORWARD_NL
                else BitAllocation(), sample_rate_hz=rate)
        except ValueError as exc:
            raise CodecError(f"invalid stream header: {exc}") from exc
        config = header if base is None else base.with_header(header)

        reader = BitReader(data[HEADER_BYTES:])
        residuals = np.empty(count, dtype=np.int64)
        params = []
        forward = scheme is Scheme.FORWARD_NL
        for i, fr in enumerate(frames(count, frame_len)):
            try:
                if forward:
                    params.append(_read_param_codes(reader, config.allocation))
                residuals[fr.slice()] = reader.read(nq, fr.length)
            except TruncatedStreamError as exc:
                raise CodecError(f"truncated payload in frame {i}: {exc}") from None
        return cls(config, count, checksum, residuals, params)


def _write_param_codes(w: BitWriter, codes: np.ndarray, allocation: BitAllocation) -> None:
    pos = 0
    for kind in GROUP_ORDER:
        size = GROUP_SIZES[kind]
        w.write(codes[pos:pos + size], allocation.bits_for(kind))
        pos += size


def _read_param_codes(r: BitReader, allocation: BitAllocation) -> np.ndarray:
    return np.concatenate([r.read(allocation.bits_for(k), GROUP_SIZES[k]) for k in GROUP_ORDER])


def quantize_network(net: MlpPredictor, bank: WeightQuantizerBank
                     ) -> tuple[np.ndarray, MlpPredictor]:
    """Codes for every parameter (group order) and the dequantized net."""
    codes, groups = [], []
    for g in split_groups(net):
        q = bank[g.kind]
        c = q.encode_array(g.values)
        codes.append(c)
        groups.append(ParamGroup(g.kind, q.decode_array(c)))
    return np.concatenate(codes), merge_groups(groups)


def dequantize_network(codes: np.ndarray, bank: WeightQuantizerBank) -> MlpPredictor:
    groups, pos = [], 0
    for kind in GROUP_ORDER:
        size = GROUP_SIZES[kind]
        groups.append(ParamGroup(kind, bank[kind].decode_array(codes[pos:pos + size])))
        pos += size
    return merge_groups(groups)


def frame_seed(global_seed: int, index: int) -> int:
    """Per-frame training seed derived from the global seed."""
    return int(np.random.SeedSequence([global_seed & 0xFFFFFFFF, index]).generate_state(1)[0])


def train_forward_frame(config: CodecConfig, x: np.ndarray, start: int, stop: int,
                        index: int) -> MlpPredictor:
    """The unquantized net the ForwardNl encoder trains for one frame."""
    tc = replace(config.train, seed=frame_seed(config.train.seed, index))
    return train_on_frame(tc, x[start:stop], x[max(0, start - N_INPUTS):start])


class Diagnostics(NamedTuple):
    prediction_errors: np.ndarray      # unquantized e(n) = x(n) - xhat(n)
    frame_starts: np.ndarray
    nets: list                         # per-frame unquantized nets (ForwardNl only)


class EncodeResult(NamedTuple):
    bitstream: Bitstream
    reconstruction: PcmSignal
    diagnostics: Diagnostics


def _mlp_params(net: MlpPredictor):
    w1 = net.w1.tolist()
    return (w1[0], w1[1], float(net.b1[0]), float(net.b1[1]),
            float(net.w2[0]), float(net.w2[1]), net.b2)


_ZERO_NET = _mlp_params(MlpPredictor.zeros())


def _run(config: CodecConfig, n_total: int, x: np.ndarray | None = None,
         stream: Bitstream | None = None, bank: WeightQuantizerBank | None = None,
         weight_mode: WeightMode = WeightMode.QUANTIZED, nets: Sequence | None = None):
    encoding = x is not None
    scheme = config.scheme
    order = config.order
    nq = config.nq
    top = (1 << (nq - 1)) - 1
    mults = config.multipliers
    smin, smax = config.step_min, config.step_max
    step = config.step_init
    tanh = math.tanh

    frame_list = frames(n_total, config.frame_len)
    recon = np.zeros(n_total)
    rec = [0.0] * n_total
    codes = np.zeros(n_total, dtype=np.int64)
    code_list = codes.tolist() if encoding else stream.residual_codes.tolist()
    errors = [0.0] * n_total if encoding else None
    param_codes: list[np.ndarray] = []
    used_nets: list[MlpPredictor] = []
    xs = x.tolist() if encoding else None

    hist = [0.0] * order
    coeffs = [0.0] * order
    net = _ZERO_NET
    mu, leak, eps = config.lms_step, config.lms_leakage, config.lms_epsilon
    lms = scheme is Scheme.BACKWARD_LMS
    nonlinear = scheme.is_nonlinear
    period = config.nl_update_period or 0
    retrain_count = 0

    for f, fr in enumerate(frame_list):
        start, stop = fr.start_index, fr.stop_index
        if scheme is Scheme.BACKWARD_LD and f > 0:
            prev = frame_list[f - 1]
            coeffs = lpc_from_window(rec[prev.start_index:prev.stop_index], order,
                                     config.lam).coeffs.tolist()
        elif scheme is Scheme.FORWARD_NL:
            if encoding:
                trained = nets[f] if nets is not None else train_forward_frame(
                    config, x, start, stop, f)
                pc, deq = quantize_network(trained, bank)
                used_nets.append(trained)
                loop_net = deq if weight_mode is WeightMode.QUANTIZED else trained
            else:
                pc = stream.param_codes[f]
                loop_net = dequantize_network(pc, bank)
            param_codes.append(pc)
            net = _mlp_params(loop_net)

        for n in range(start, stop):
            if period and n and n % period == 0:
                retrain_count += 1
                net = _mlp_params(_retrain_backward(config, rec, n, retrain_count))
            if nonlinear:
                wa, wb, ba, bb, va, vb, b2 = net
                xhat = (va * tanh(ba + sum(map(mul, wa, hist)))
                        + vb * tanh(bb + sum(map(mul, wb, hist))) + b2)
            else:
                xhat = sum(map(mul, coeffs, hist))

            if encoding:
                e = xs[n] - xhat
                errors[n] = e
                code, eq, step = quantize_residual(e, step, top, mults, smin, smax)
                code_list[n] = code
            else:
                eq, step = dequantize_residual(code_list[n], step, mults, smin, smax)

            xt = xhat + eq
            if xt > 1.0:
                xt = 1.0
            elif xt < -1.0:
                xt = -1.0
            if lms:
                g = mu * eq / (eps + sum(map(mul, hist, hist)))
                coeffs = [leak * a + g * h for a, h in zip(coeffs, hist)]
            rec[n] = xt
            hist.pop()
            hist.insert(0, xt)

    recon[:] = rec
    if encoding:
        codes[:] = code_list
    return recon, codes, (np.array(errors) if encoding else None), param_codes, used_nets


def _retrain_backward(config: CodecConfig, rec: list, n: int, index: int) -> MlpPredictor:
    lo = max(0, n - config.frame_len)
    window = rec[lo:n]
    seed_hist = rec[max(0, lo - N_INPUTS):lo]
    tc = replace(config.train, seed=frame_seed(config.train.seed, index))
    return train_on_frame(tc, window, seed_hist)


def encode(config: CodecConfig, signal: PcmSignal,
           codebooks: WeightQuantizerBank | None = None,
           weight_mode: WeightMode | str = WeightMode.QUANTIZED,
           nets: Sequence[MlpPredictor] | None = None) -> EncodeResult:
    """Encode ``signal``; returns the stream, the encoder-side reconstruction
    and the unquantized prediction errors.

    ``nets`` may carry precomputed ForwardNl frame nets (as produced by
    :func:`train_forward_frame`) to skip retraining in parameter sweeps.
    """
    weight_mode = WeightMode(weight_mode)
    if len(signal) == 0:
        raise CodecError("cannot encode an empty signal")
    if signal.sample_rate_hz != config.sample_rate_hz:
        config = replace(config, sample_rate_hz=signal.sample_rate_hz)
    if config.scheme is Scheme.FORWARD_NL:
        if codebooks is None:
            raise CodecError("ForwardNl needs a codebook bank")
        if not codebooks.matches(config.allocation):
            raise CodecError(f"codebook bank is {codebooks.allocation}, "
                             f"config allocation is {config.allocation}")
    x = signal.samples
    recon, codes, errors, pcodes, used = _run(config, len(x), x=x, bank=codebooks,
                                              weight_mode=weight_mode, nets=nets)
    stream = Bitstream(config, len(x), side_checksum(config, codebooks), codes, pcodes)
    starts = np.array([f.start_index for f in frames(len(x), config.frame_len)])
    return EncodeResult(stream, PcmSignal(recon, signal.sample_rate_hz),
                        Diagnostics(errors, starts, used))


def decode(bitstream: Bitstream | bytes, codebooks: WeightQuantizerBank | None = None,
           tuning: CodecConfig | None = None) -> PcmSignal:
    """Rebuild the signal from a stream.

    ``tuning`` supplies settings the header does not carry (quantizer step
    limits and multipliers, LMS constants, backward-MLP training); it must
    match the encoder's, which the header checksum verifies.
    """
    if isinstance(bitstream, (bytes, bytearray, memoryview)):
        bitstream = Bitstream.from_bytes(bytes(bitstream), base=tuning)
    elif tuning is not None:
        bitstream = replace(bitstream, config=tuning.with_header(bitstream.config))
    config = bitstream.config
    if config.scheme is Scheme.FORWARD_NL:
        if codebooks is None:
            raise CodecError("ForwardNl stream needs a codebook bank to decode")
        if not codebooks.matches(config.allocation):
            raise CodebookMismatchError("codebook checksum mismatch: bank allocation "
                                        f"{codebooks.allocation} != {config.allocation}")
    if side_checksum(config, codebooks) != bitstream.checksum:
        raise CodebookMismatchError("codebook checksum mismatch")
    if len(bitstream.residual_codes) != bitstream.sample_count:
        raise CodecError("residual code count does not match the header")
    recon, *_ = _run(config, bitstream.sample_count, stream=bitstream, bank=codebooks)
    return PcmSignal(recon, config.sample_rate_hz)

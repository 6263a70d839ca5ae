"""Segmental SNR, prediction gain and bitrate accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .codec import CodecConfig
from .signal_io import PcmSignal

DEFAULT_SEGMENT_LEN = 80
SNR_FLOOR_DB = 0.0
SNR_CEIL_DB = 60.0


@dataclass
class MetricsReport:
    segsnr_db: float
    gp_db: float
    bitrate_bps: float
    per_segment_snr: np.ndarray = field(repr=False)


def _samples(s) -> np.ndarray:
    return s.samples if isinstance(s, PcmSignal) else np.asarray(s, dtype=np.float64)


def segsnr(original, reconstructed, segment_len: int = DEFAULT_SEGMENT_LEN
           ) -> tuple[float, np.ndarray]:
    """Mean per-segment SNR in dB.

    Each segment's SNR is clamped to [0, 60] dB; silent segments and the
    trailing partial segment are skipped.
    """
    x = _samples(original)
    y = _samples(reconstructed)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    if segment_len < 1:
        raise ValueError("segment_len must be positive")
    n_seg = x.shape[0] // segment_len
    if n_seg == 0:
        raise ValueError("signal shorter than one segment")
    xs = x[:n_seg * segment_len].reshape(n_seg, segment_len)
    ds = xs - y[:n_seg * segment_len].reshape(n_seg, segment_len)
    sig = np.einsum("ij,ij->i", xs, xs)
    noise = np.einsum("ij,ij->i", ds, ds)
    keep = sig > 0
    if not np.any(keep):
        raise ValueError("no non-silent segments")
    sig, noise = sig[keep], noise[keep]
    with np.errstate(divide="ignore"):
        snr = np.where(noise > 0, 10.0 * np.log10(sig / np.where(noise > 0, noise, 1.0)),
                       np.inf)
    snr = np.clip(snr, SNR_FLOOR_DB, SNR_CEIL_DB)
    return float(snr.mean()), snr


def prediction_gain(original, prediction_errors) -> float:
    """Whole-signal prediction gain ``10 log10(sum x^2 / sum e^2)``.

    Returns ``math.inf`` when the error energy is exactly zero.
    """
    x = _samples(original)
    e = np.asarray(prediction_errors, dtype=np.float64)
    if x.shape != e.shape:
        raise ValueError(f"length mismatch: {x.shape[0]} vs {e.shape[0]}")
    ex = float(x @ x)
    ee = float(e @ e)
    if ex == 0:
        raise ValueError("signal has no energy")
    if ee == 0:
        return math.inf
    return 10.0 * math.log10(ex / ee)


def framewise_prediction_gain(original, prediction_errors, frame_len: int) -> float:
    """Mean of per-frame prediction gains over frames with energy on both sides."""
    x = _samples(original)
    e = np.asarray(prediction_errors, dtype=np.float64)
    gains = []
    for s in range(0, x.shape[0], frame_len):
        ex = float(x[s:s + frame_len] @ x[s:s + frame_len])
        ee = float(e[s:s + frame_len] @ e[s:s + frame_len])
        if ex > 0 and ee > 0:
            gains.append(10.0 * math.log10(ex / ee))
    if not gains:
        raise ValueError("no usable frames")
    return float(np.mean(gains))


def overall_bitrate(config: CodecConfig) -> float:
    """Residual rate plus predictor side information, in bits per second."""
    rate = config.sample_rate_hz
    return config.nq * rate + config.param_bits_per_frame * rate / config.frame_len


def evaluate(config: CodecConfig, original, reconstructed, prediction_errors,
             segment_len: int = DEFAULT_SEGMENT_LEN) -> MetricsReport:
    snr, per_seg = segsnr(original, reconstructed, segment_len)
    return MetricsReport(snr, prediction_gain(original, prediction_errors),
                         overall_bitrate(config), per_seg)

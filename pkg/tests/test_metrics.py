import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.signal import lfilter

from nladpcm.codec import CodecConfig, Scheme
from nladpcm.metrics import (evaluate, framewise_prediction_gain, overall_bitrate,
                             prediction_gain, segsnr)
from nladpcm.quantizer import BitAllocation
from nladpcm.signal_io import PcmSignal


def test_perfect_reconstruction_clamps_to_ceiling():
    x = np.random.default_rng(0).normal(size=800)
    mean, per = segsnr(x, x)
    assert mean == 60.0 and np.all(per == 60.0)


def test_zero_reconstruction_is_zero_db():
    x = np.random.default_rng(0).normal(size=800)
    mean, per = segsnr(x, np.zeros_like(x))
    assert mean == 0.0 and per.shape == (10,)


def test_ten_db_noise():
    rng = np.random.default_rng(1)
    x = rng.normal(size=10 ** 5)
    y = x + rng.normal(scale=math.sqrt(0.1), size=x.shape)
    assert segsnr(x, y)[0] == pytest.approx(10.0, abs=0.5)


def test_segsnr_skips_silence_and_partial_segment():
    x = np.r_[np.zeros(80), np.ones(80), np.ones(40)]
    y = x * 0.9
    mean, per = segsnr(x, y)
    assert per.shape == (1,)
    assert mean == pytest.approx(20.0)


def test_segsnr_errors():
    with pytest.raises(ValueError):
        segsnr(np.ones(100), np.ones(90))
    with pytest.raises(ValueError):
        segsnr(np.ones(50), np.ones(50))
    with pytest.raises(ValueError):
        segsnr(np.zeros(160), np.zeros(160))


@settings(deadline=None, max_examples=50)
@given(st.floats(1e-3, 1e3), st.booleans(), st.integers(0, 1000))
def test_segsnr_scale_invariant(c, negate, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=400)
    y = x + rng.normal(scale=0.3, size=400)
    c = -c if negate else c
    np.testing.assert_allclose(segsnr(c * x, c * y)[1], segsnr(x, y)[1], rtol=1e-9)


def test_prediction_gain_examples():
    x = np.random.default_rng(2).normal(size=1000)
    assert prediction_gain(x, x) == 0.0
    assert prediction_gain(x, x / 10) == pytest.approx(20.0)
    assert prediction_gain(x, np.zeros_like(x)) == math.inf
    with pytest.raises(ValueError):
        prediction_gain(np.zeros(10), np.ones(10))
    with pytest.raises(ValueError):
        prediction_gain(x, x[:-1])


def test_prediction_gain_ar1():
    rng = np.random.default_rng(3)
    w = rng.normal(size=200000)
    x = lfilter([1.0], [1.0, -0.9], w)
    e = x - 0.9 * np.r_[0.0, x[:-1]]
    assert prediction_gain(x, e) == pytest.approx(10 * math.log10(1 / 0.19), abs=0.1)


def test_prediction_gain_additive_under_repetition():
    rng = np.random.default_rng(4)
    x = rng.normal(size=500)
    e = x * 0.3 + rng.normal(scale=0.01, size=500)
    assert prediction_gain(np.r_[x, x], np.r_[e, e]) == pytest.approx(prediction_gain(x, e))


def test_framewise_gain():
    x = np.r_[np.ones(100), 2 * np.ones(100)]
    e = np.r_[0.1 * np.ones(100), 2 * np.ones(100)]
    assert framewise_prediction_gain(x, e, 100) == pytest.approx(10.0)


def test_bitrate_examples():
    assert overall_bitrate(CodecConfig(scheme=Scheme.BACKWARD_LD, nq=5)) == 40000
    fwd = CodecConfig(scheme=Scheme.FORWARD_NL, nq=5, frame_len=200,
                      allocation=BitAllocation(7, 10, 7, 10))
    assert overall_bitrate(fwd) == 47360
    with pytest.raises(ValueError):
        CodecConfig(scheme=Scheme.FORWARD_NL, frame_len=0)


def test_bitrate_monotone():
    base = dict(scheme=Scheme.FORWARD_NL, frame_len=200)
    rates = [overall_bitrate(CodecConfig(nq=n, **base)) for n in (2, 3, 4, 5)]
    assert rates == sorted(rates) and len(set(rates)) == 4
    for i in range(4):
        lo = [6, 6, 6, 6]
        hi = list(lo)
        hi[i] = 7
        assert overall_bitrate(CodecConfig(allocation=BitAllocation(*hi), **base)) > \
            overall_bitrate(CodecConfig(allocation=BitAllocation(*lo), **base))
    for fl in (50, 100, 200):
        assert overall_bitrate(CodecConfig(scheme=Scheme.BACKWARD_LMS, nq=3, frame_len=fl)) == 24000


def test_evaluate_report():
    x = PcmSignal(np.random.default_rng(5).normal(scale=0.1, size=800))
    rep = evaluate(CodecConfig(nq=2), x, x, x.samples)
    assert rep.segsnr_db == pytest.approx(np.mean(rep.per_segment_snr))
    assert rep.gp_db == 0.0 and rep.bitrate_bps == 16000

"""Acceptance gate: the property suite (1-6) and the speech trend suite (7-12).

Every test records one PASS/FAIL line that is repeated in the terminal
summary. Trend checks run on the bundled public-domain speech (see
tests/data/speech/SOURCES.md); NLADPCM_SPEECH_TRAIN / NLADPCM_SPEECH_TEST
point them at another corpus.
"""

import os

import numpy as np
import pytest
from scipy.linalg import solve, toeplitz

from nladpcm.codec import CodecConfig, Scheme, WeightMode, decode, encode
from nladpcm.experiments import frame_nets
from nladpcm.lpc import autocorrelation, levinson_durbin
from nladpcm.metrics import overall_bitrate, prediction_gain, segsnr
from nladpcm.mlp import N_PARAMS, MlpPredictor, mlp_forward, mlp_gradient, pool_parameters
from nladpcm.quantizer import (STEP_MAX, STEP_MIN, AdaptiveResidualQuantizer, BitAllocation,
                               QuantizerKind, design_bank, design_equal_occupancy,
                               rq_dequantize, rq_quantize)
from nladpcm.signal_io import PcmSignal, concat_corpus, load_pcm

from conftest import TEST_DIR, record_criterion

NQS = (2, 3, 4, 5)


# --- property suite -------------------------------------------------------------------

def test_criterion_01_codec_synchrony(train_pools):
    rng = np.random.default_rng(2024)
    signals = [
        PcmSignal(rng.uniform(-1, 1, 1500)),
        PcmSignal(np.clip(np.cumsum(rng.normal(scale=0.05, size=1500)), -1, 1)),
        PcmSignal(rng.normal(scale=0.1, size=1500) * np.sin(np.arange(1500) / 40.0)),
        load_pcm(os.path.join(TEST_DIR, "001.wav")),
    ]
    bank = design_bank(train_pools, BitAllocation(7, 10, 7, 10))
    failures, runs = [], 0
    for scheme in Scheme:
        for nq in NQS:
            for frame_len in (50, 100, 200):
                cfg = CodecConfig(scheme=scheme, nq=nq, frame_len=frame_len,
                                  allocation=BitAllocation(7, 10, 7, 10))
                cb = bank if scheme is Scheme.FORWARD_NL else None
                for i, sig in enumerate(signals):
                    res = encode(cfg, sig, cb)
                    out = decode(res.bitstream.to_bytes(), cb, tuning=cfg)
                    runs += 1
                    if not np.array_equal(out.samples, res.reconstruction.samples):
                        failures.append((scheme.label, nq, frame_len, i))
    ok = not failures
    record_criterion(1, "codec synchrony", ok,
                     f"{runs - len(failures)}/{runs} encode/decode runs bit-exact")
    assert ok, failures


def test_criterion_02_levinson_oracle():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        # positive-definite autocorrelation of a random coloured sequence
        n = int(rng.integers(60, 400))
        x = np.convolve(rng.standard_normal(n), rng.normal(size=int(rng.integers(1, 6))))
        r = autocorrelation(x, 25)
        for order in range(1, 26):
            pred, _ = levinson_durbin(r, order)
            oracle = solve(toeplitz(r[:order]), r[1:order + 1], assume_a="pos")
            worst = max(worst, float(np.max(np.abs(pred.coeffs - oracle))))
    ok = worst <= 1e-9
    record_criterion(2, "Levinson-Durbin vs Toeplitz solve", ok,
                     f"max-abs difference {worst:.2e} (tolerance 1e-9)")
    assert ok


def test_criterion_03_mlp_gradient():
    rng = np.random.default_rng(3)
    eps = 1e-6
    worst = 0.0
    for _ in range(100):
        v = rng.normal(scale=0.7, size=N_PARAMS)
        h = rng.uniform(-1, 1, 10)
        t = float(rng.uniform(-1, 1))
        g = mlp_gradient(MlpPredictor.from_vector(v), h, t).to_vector()
        fd = np.empty(N_PARAMS)
        for i in range(N_PARAMS):
            up, dn = v.copy(), v.copy()
            up[i] += eps
            dn[i] -= eps
            lu = 0.5 * (mlp_forward(MlpPredictor.from_vector(up), h) - t) ** 2
            ld = 0.5 * (mlp_forward(MlpPredictor.from_vector(dn), h) - t) ** 2
            fd[i] = (lu - ld) / (2 * eps)
        worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(fd)))
    ok = worst < 1e-5
    record_criterion(3, "MLP gradient vs central differences", ok,
                     f"worst relative error {worst:.2e} (tolerance 1e-5)")
    assert ok


def test_criterion_04_equal_occupancy():
    n = 10 ** 5
    rng = np.random.default_rng(4)
    samples = rng.standard_t(4, n) * rng.choice([0.05, 1.0], n)
    bad = []
    for bits in range(1, 11):
        q = design_equal_occupancy(samples, bits)
        counts = np.bincount(q.encode_array(samples), minlength=1 << bits)
        cells = 1 << bits
        if counts.min() < n // cells or counts.max() > -(-n // cells):
            bad.append(bits)
    ok = not bad
    record_criterion(4, "equal-occupancy cell counts", ok,
                     "every cell within floor/ceil of N/2^bits for bits 1-10" if ok
                     else f"violations at bits {bad}")
    assert ok


def test_criterion_05_residual_quantizer_bound():
    rng = np.random.default_rng(5)
    violations = 0
    total = 0
    for bits in NQS:
        n = 10 ** 6 // len(NQS)
        # amplitude bursts over four decades so the step sweeps its whole range
        scale = np.repeat(10.0 ** rng.uniform(-6, 0.5, n // 500), 500)
        errors = rng.standard_normal(n) * scale
        enc = dec = AdaptiveResidualQuantizer(bits)
        top = 1 << (bits - 1)
        for e in errors.tolist():
            step = enc.step
            code, rec, enc = rq_quantize(enc, e)
            rec_d, dec = rq_dequantize(dec, code)
            if abs(e) < top * step and abs(e - rec) > step / 2:
                violations += 1
            if not STEP_MIN <= enc.step <= STEP_MAX or rec_d != rec or dec.step != enc.step:
                violations += 1
        total += n
    ok = violations == 0
    record_criterion(5, "residual quantizer bound and step clamp", ok,
                     f"{violations} violations over {total} samples")
    assert ok


def test_criterion_06_rate_accounting(train_pools):
    rng = np.random.default_rng(6)
    mismatches = 0
    for _ in range(20):
        scheme = Scheme(int(rng.integers(0, 4)))
        nq = int(rng.integers(2, 6))
        frame_len = int(rng.choice([50, 100, 200, 77]))
        alloc = BitAllocation(*(int(b) for b in rng.integers(1, 11, 4)))
        n = int(rng.integers(1, 900))
        cfg = CodecConfig(scheme=scheme, nq=nq, frame_len=frame_len, order=10, allocation=alloc)
        bank = design_bank(train_pools, alloc) if scheme is Scheme.FORWARD_NL else None
        sig = PcmSignal(rng.uniform(-0.5, 0.5, n))
        stream = encode(cfg, sig, bank).bitstream
        frames = -(-n // frame_len)
        bits = frames * cfg.param_bits_per_frame + n * nq
        if len(stream.payload()) != -(-bits // 8) or stream.payload_bits != bits:
            mismatches += 1
    alloc = BitAllocation(7, 10, 7, 10)
    rate = overall_bitrate(CodecConfig(scheme=Scheme.FORWARD_NL, nq=5, frame_len=200,
                                       allocation=alloc))
    ok = mismatches == 0 and alloc.bits_per_frame() == 184 and rate == 47360
    record_criterion(6, "rate accounting", ok,
                     f"{20 - mismatches}/20 streams match; 7-10-7-10 -> "
                     f"{alloc.bits_per_frame()} bits/frame, {rate:g} bps")
    assert ok


# --- trend suite ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def full_corpus(train_corpus, test_corpus):
    """All bundled speech; the linear schemes have no training, so all of it is held out."""
    sig = concat_corpus([train_corpus, test_corpus])
    assert sig.duration_s >= 60
    return sig


_cache: dict = {}


def _linear(corpus, scheme, nq, frame_len=100, order=10, lam=1.0):
    key = (id(corpus), scheme, nq, frame_len, order, lam)
    if key not in _cache:
        cfg = CodecConfig(scheme=scheme, nq=nq, frame_len=frame_len, order=order, lam=lam)
        res = encode(cfg, corpus)
        _cache[key] = (segsnr(corpus, res.reconstruction)[0],
                       prediction_gain(corpus, res.diagnostics.prediction_errors))
    return _cache[key]


@pytest.mark.slow
def test_criterion_07_segsnr_per_bit(full_corpus):
    snr = [_linear(full_corpus, Scheme.BACKWARD_LD, nq)[0] for nq in NQS]
    steps = np.diff(snr)
    ok = bool(np.all((steps >= 3.5) & (steps <= 6.0)))
    record_criterion(7, "LD-10 SEGSNR gain per residual bit", ok,
                     "SEGSNR " + " -> ".join(f"{s:.2f}" for s in snr)
                     + " dB; steps " + ", ".join(f"{d:.2f}" for d in steps) + " (want 3.5-6)")
    assert ok


@pytest.mark.slow
def test_criterion_08_gain_growth(full_corpus):
    ld = {nq: _linear(full_corpus, Scheme.BACKWARD_LD, nq)[1] for nq in (3, 5)}
    lms = {nq: _linear(full_corpus, Scheme.BACKWARD_LMS, nq)[1] for nq in (3, 5)}
    d_ld, d_lms = ld[5] - ld[3], lms[5] - lms[3]
    ok = d_ld >= 3 * d_lms
    record_criterion(8, "LD Gp rise vs LMS Gp rise (nq 3->5)", ok,
                     f"LD {ld[3]:.2f}->{ld[5]:.2f} (+{d_ld:.2f}), LMS {lms[3]:.2f}->{lms[5]:.2f} "
                     f"(+{d_lms:.2f}); need LD rise >= {3 * d_lms:.2f}")
    assert ok


@pytest.mark.slow
def test_criterion_09_bandwidth_expansion(full_corpus):
    gains = {}
    for nq in (2, 5):
        base = _linear(full_corpus, Scheme.BACKWARD_LD, nq, frame_len=50, order=25, lam=1.0)[0]
        bwe = _linear(full_corpus, Scheme.BACKWARD_LD, nq, frame_len=50, order=25, lam=0.92)[0]
        gains[nq] = (base, bwe, bwe - base)
    ok = all(g[2] >= 0.5 for g in gains.values())
    record_criterion(9, "LD-25 frame 50 bandwidth expansion gain", ok,
                     "; ".join(f"nq {nq}: {b:.2f} -> {e:.2f} ({d:+.2f} dB)"
                               for nq, (b, e, d) in gains.items()) + " (need >= +0.5)")
    assert ok


@pytest.mark.slow
def test_criterion_10_block_beats_sample_adaptive(full_corpus):
    rows = {nq: (_linear(full_corpus, Scheme.BACKWARD_LD, nq)[0],
                 _linear(full_corpus, Scheme.BACKWARD_LMS, nq)[0]) for nq in (4, 5)}
    ok = all(ld >= lms for ld, lms in rows.values())
    record_criterion(10, "LD-10 vs LMS-10 SEGSNR", ok,
                     "; ".join(f"nq {nq}: LD {ld:.2f} vs LMS {lms:.2f}"
                               for nq, (ld, lms) in rows.items()))
    assert ok


# ForwardNl trends use two-fold cross validation: codebooks designed on one
# half of the corpus are evaluated on the other half, and the per-segment SNRs
# of both held-out halves are pooled.

FRAME = 200


@pytest.fixture(scope="module")
def folds(train_corpus, test_corpus, train_nets):
    cfg = CodecConfig(scheme=Scheme.FORWARD_NL, frame_len=FRAME)
    test_nets = frame_nets(cfg, test_corpus)
    a = (pool_parameters(train_nets), train_corpus, train_nets)
    b = (pool_parameters(test_nets), test_corpus, test_nets)
    # (design pools, design signal, design nets, eval signal, eval nets)
    return [(a[0], a[1], a[2], b[1], b[2]), (b[0], b[1], b[2], a[1], a[2])]


def _fnl_segsnr(signal, nets, bank, nq, mode=WeightMode.QUANTIZED):
    cfg = CodecConfig(scheme=Scheme.FORWARD_NL, nq=nq, frame_len=FRAME,
                      allocation=bank.allocation)
    res = encode(cfg, signal, bank, weight_mode=mode, nets=nets)
    out = res.reconstruction if mode is WeightMode.UNQUANTIZED else decode(res.bitstream, bank)
    return segsnr(signal, out)[1]


def _held_out(folds, nq, make_bank, mode=WeightMode.QUANTIZED):
    per_seg = [_fnl_segsnr(sig, nets, make_bank(pools, dsig, dnets), nq, mode)
               for pools, dsig, dnets, sig, nets in folds]
    return float(np.mean(np.concatenate(per_seg)))


_bank_cache: dict = {}


def _eo_bank(bits):
    def make(pools, dsig, dnets):
        key = ("eo", id(pools), bits)
        if key not in _bank_cache:
            _bank_cache[key] = design_bank(pools, BitAllocation.uniform(bits))
        return _bank_cache[key]
    return make


CLIPS = (0.0, 1e-4, 5e-4, 1e-3, 2e-3, 5e-3, 1e-2, 2e-2)


def _tuned_uniform_bank(nq):
    """10-bit uniform bank whose clip fraction maximizes SEGSNR on the design half."""
    def make(pools, dsig, dnets):
        key = ("uni", id(pools), nq)
        if key not in _bank_cache:
            best = None
            for clip in CLIPS:
                bank = design_bank(pools, BitAllocation.uniform(10), QuantizerKind.UNIFORM, clip)
                score = float(np.mean(_fnl_segsnr(dsig, dnets, bank, nq)))
                if best is None or score > best[0]:
                    best = (score, clip, bank)
            _bank_cache[key] = best
        return _bank_cache[key][2]
    return make


@pytest.mark.slow
def test_criterion_11_weight_bits(folds):
    bits_range = range(6, 11)
    table = {nq: [_held_out(folds, nq, _eo_bank(b)) for b in bits_range] for nq in NQS}
    monotone = all(b >= a - 0.3 for snrs in table.values() for a, b in zip(snrs, snrs[1:]))

    nq = 5
    uniform = _held_out(folds, nq, _tuned_uniform_bank(nq))
    ablation = _held_out(folds, nq, _eo_bank(10), WeightMode.UNQUANTIZED)
    clips = sorted({v[1] for k, v in _bank_cache.items() if k[0] == "uni" and k[2] == nq})
    close = abs(uniform - ablation) <= 1.0

    ok = monotone and close
    detail = "; ".join(f"nq {q}: " + "/".join(f"{s:.2f}" for s in snrs)
                       for q, snrs in table.items())
    record_criterion(11, "ForwardNl weight-bit monotonicity and 10-bit uniform", ok,
                     f"SEGSNR at 6..10 bits {detail}; nq 5 uniform-10 (clip {clips}) "
                     f"{uniform:.2f} vs unquantized {ablation:.2f} dB")
    assert ok


@pytest.mark.slow
def test_criterion_12_quantized_in_loop(folds):
    rows = []
    for bits in (6, 7):
        for nq in NQS:
            q = _held_out(folds, nq, _eo_bank(bits))
            m = _held_out(folds, nq, _eo_bank(bits), WeightMode.MISMATCHED)
            rows.append((bits, nq, q, m))
    ok = all(m < q for _, _, q, m in rows)
    record_criterion(12, "quantized-in-loop vs mismatched encoder", ok,
                     "; ".join(f"{b} bits nq {nq}: {q:.2f} vs {m:.2f}" for b, nq, q, m in rows))
    assert ok

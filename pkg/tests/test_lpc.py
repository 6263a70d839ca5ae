import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import solve_toeplitz

from nladpcm.lpc import (DegenerateWindowError, LinearPredictor, LmsState, autocorrelation,
                         bandwidth_expand, levinson_durbin, lms_predict, lms_update,
                         lpc_from_window)

from conftest import AR10, ar_source


def test_autocorrelation_examples():
    assert autocorrelation([1, 1, 1, 1], 2).tolist() == [4, 3, 2]
    assert autocorrelation(np.zeros(5), 3).tolist() == [0, 0, 0, 0]
    assert autocorrelation([1, -1, 1, -1], 1).tolist() == [4, -3]
    with pytest.raises(ValueError):
        autocorrelation([1, 2], 2)
    with pytest.raises(ValueError):
        autocorrelation([], 0)


@given(st.lists(st.floats(-1, 1), min_size=2, max_size=64))
def test_autocorrelation_lag0_dominates(w):
    r = autocorrelation(w, len(w) - 1)
    assert np.all(np.abs(r) <= r[0] * (1 + 1e-12) + 1e-300)


def test_levinson_ar1():
    p, err = levinson_durbin([1, 0.9, 0.81], 2)
    np.testing.assert_allclose(p.coeffs, [0.9, 0.0], atol=1e-15)
    assert err == pytest.approx(0.19)


def test_levinson_white():
    p, err = levinson_durbin([1.0] + [0.0] * 6, 6)
    assert np.all(p.coeffs == 0) and err == 1.0


def test_levinson_degenerate():
    with pytest.raises(DegenerateWindowError):
        levinson_durbin([0.0, 0.0, 0.0], 2)
    assert lpc_from_window(np.zeros(50), 10) == LinearPredictor.zeros(10)


def test_levinson_matches_toeplitz_on_ar10():
    x = ar_source(AR10, 20000, seed=3)
    r = autocorrelation(x, 10)
    p, _ = levinson_durbin(r, 10)
    oracle = solve_toeplitz(r[:10], r[1:11])
    assert np.max(np.abs(p.coeffs - oracle)) < 1e-9
    assert np.max(np.abs(p.coeffs - AR10)) < 0.05


def test_error_power_non_increasing_in_order():
    rng = np.random.default_rng(5)
    r = autocorrelation(rng.standard_normal(400).cumsum() * 0.01, 25)
    errs = [levinson_durbin(r, k)[1] for k in range(1, 26)]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(errs, errs[1:]))
    assert all(e >= 0 for e in errs)


def test_bandwidth_expand_examples():
    np.testing.assert_allclose(bandwidth_expand(LinearPredictor([0.9, 0.0]), 0.92).coeffs,
                               [0.828, 0.0])
    p = LinearPredictor([0.3, -0.2, 0.1])
    assert bandwidth_expand(p, 1.0) == p
    np.testing.assert_allclose(bandwidth_expand(LinearPredictor([1.0, 1.0, 1.0]), 0.5).coeffs,
                               [0.5, 0.25, 0.125])
    with pytest.raises(ValueError):
        bandwidth_expand(p, 0.0)


@given(st.floats(-1.9, 1.9), st.floats(-0.95, 0.95), st.floats(0.5, 0.999))
def test_bandwidth_expand_scales_root_radius(a1, a2, lam):
    before = np.sort(np.abs(np.roots([1.0, -a1, -a2])))
    q = bandwidth_expand(LinearPredictor([a1, a2]), lam)
    after = np.sort(np.abs(np.roots([1.0, -q.coeffs[0], -q.coeffs[1]])))
    np.testing.assert_allclose(after, lam * before, rtol=1e-6, atol=1e-9)


def test_lms_predict_examples():
    st_ = LmsState.initial(10)
    assert lms_predict(st_, np.ones(10)) == 0.0
    one_tap = LmsState(LinearPredictor([1.0] + [0.0] * 9))
    assert lms_predict(one_tap, [0.5] + [0.3] * 9) == 0.5
    assert lms_predict(LmsState(LinearPredictor([0.5, 0.25])), [0.2, 0.4]) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        lms_predict(st_, np.ones(3))


def test_lms_update_leakage_only_cases():
    s = LmsState(LinearPredictor([0.5, -0.25]), leakage=0.99)
    np.testing.assert_allclose(lms_update(s, [0.3, 0.1], 0.0).predictor.coeffs, [0.495, -0.2475])
    np.testing.assert_allclose(lms_update(s, [0.0, 0.0], 0.7).predictor.coeffs, [0.495, -0.2475])


def test_lms_update_formula():
    s = LmsState(LinearPredictor([0.1, 0.2]), step_size=0.1, leakage=0.9, epsilon=1e-3)
    h = np.array([0.3, -0.4])
    expect = 0.9 * np.array([0.1, 0.2]) + 0.1 * 0.05 * h / (1e-3 + 0.25)
    np.testing.assert_allclose(lms_update(s, h, 0.05).predictor.coeffs, expect, rtol=1e-15)


def test_lms_converges_on_ar10():
    # leakage biases the solution toward zero, so the convergence check
    # runs without it and with a moderate step size
    x = ar_source(AR10, 50010, seed=0, scale=0.01)
    s = LmsState.initial(10, step_size=0.01, leakage=1.0)
    for n in range(10, x.shape[0]):
        h = x[n - 10:n][::-1]
        s = lms_update(s, h, x[n] - lms_predict(s, h))
    assert np.linalg.norm(s.predictor.coeffs - AR10) < 0.1


def test_lms_bounded_under_adversarial_input():
    rng = np.random.default_rng(2)
    s = LmsState.initial(10)
    bound = s.step_size / (1 - s.leakage)
    hs = rng.choice([-1.0, 1.0], size=(10 ** 6, 10))
    es = rng.choice([-1.0, 1.0], size=10 ** 6)
    worst = 0.0
    for h, e in zip(hs, es):
        s = lms_update(s, h, e)
        worst = max(worst, float(np.max(np.abs(s.predictor.coeffs))))
    assert worst <= bound


def test_lms_trajectory_deterministic():
    rng = np.random.default_rng(9)
    hs = rng.uniform(-1, 1, (500, 10))
    es = rng.uniform(-0.1, 0.1, 500)

    def run():
        s = LmsState.initial(10)
        out = []
        for h, e in zip(hs, es):
            s = lms_update(s, h, e)
            out.append(s.predictor.coeffs)
        return np.array(out)

    assert np.array_equal(run(), run())


def test_lms_state_validation():
    with pytest.raises(ValueError):
        LmsState.initial(4, step_size=0.0)
    with pytest.raises(ValueError):
        LmsState.initial(4, leakage=1.5)
    with pytest.raises(ValueError):
        LinearPredictor([np.inf])

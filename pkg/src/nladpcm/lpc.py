"""Linear prediction: autocorrelation LPC via Levinson-Durbin, bandwidth
expansion, and normalized LMS sample-by-sample adaptation.

Sign convention throughout: ``xhat(n) = sum_k a[k-1] * x(n - k)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

WHITE_NOISE_CORRECTION = 1.0001


class DegenerateWindowError(ValueError):
    """The autocorrelation has no energy; there is nothing to solve."""


@dataclass(frozen=True, eq=False)
class LinearPredictor:
    coeffs: np.ndarray

    def __post_init__(self):
        a = np.array(self.coeffs, dtype=np.float64).reshape(-1)
        if a.size == 0:
            raise ValueError("predictor order must be positive")
        if not np.all(np.isfinite(a)):
            raise ValueError("predictor coefficients must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "coeffs", a)

    @property
    def order(self) -> int:
        return self.coeffs.shape[0]

    @classmethod
    def zeros(cls, order: int) -> "LinearPredictor":
        return cls(np.zeros(order))

    def predict(self, history: Sequence[float]) -> float:
        return float(np.dot(self.coeffs, history))

    def __eq__(self, other):
        if not isinstance(other, LinearPredictor):
            return NotImplemented
        return np.array_equal(self.coeffs, other.coeffs)


@dataclass(frozen=True)
class LmsState:
    predictor: LinearPredictor
    step_size: float = 0.05
    leakage: float = 0.9999
    epsilon: float = 1e-6

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("LMS step_size must be positive")
        if not 0 < self.leakage <= 1:
            raise ValueError("LMS leakage must lie in (0, 1]")
        if not self.epsilon > 0:
            raise ValueError("LMS epsilon must be positive")

    @classmethod
    def initial(cls, order: int, **kwargs) -> "LmsState":
        return cls(LinearPredictor.zeros(order), **kwargs)


def autocorrelation(window: Sequence[float], max_lag: int) -> np.ndarray:
    """Biased (unnormalized) autocorrelation ``r[0..max_lag]``."""
    w = np.asarray(window, dtype=np.float64)
    n = w.shape[0]
    if n < 1:
        raise ValueError("window must hold at least one sample")
    if max_lag < 0 or max_lag > n - 1:
        raise ValueError(f"max_lag {max_lag} too large for window of {n} samples")
    return np.array([np.dot(w[k:], w[:n - k]) for k in range(max_lag + 1)])


def levinson_durbin(r: Sequence[float], order: int) -> tuple[LinearPredictor, float]:
    """Solve the Toeplitz normal equations of order ``order``.

    Returns the predictor and the final prediction error power. Raises
    :class:`DegenerateWindowError` when ``r[0] <= 0``; callers substitute
    the zero predictor in that case.
    """
    r = np.asarray(r, dtype=np.float64)
    if order < 1:
        raise ValueError("order must be positive")
    if r.shape[0] < order + 1:
        raise ValueError(f"need {order + 1} autocorrelation lags, got {r.shape[0]}")
    if not r[0] > 0:
        raise DegenerateWindowError("r[0] must be positive")

    a = np.zeros(order)
    err = r[0]
    for i in range(order):
        acc = r[i + 1] - np.dot(a[:i], r[i:0:-1])
        k = acc / err
        if not abs(k) < 1.0:
            # loss of positive definiteness from roundoff; keep the lower order
            break
        prev = a[:i].copy()
        a[:i] = prev - k * prev[::-1]
        a[i] = k
        err *= 1.0 - k * k
    return LinearPredictor(a), max(float(err), 0.0)


def bandwidth_expand(p: LinearPredictor, lam: float) -> LinearPredictor:
    """Scale coefficient k by ``lam**k`` (k starting at 1)."""
    if not 0 < lam <= 1:
        raise ValueError("lambda must lie in (0, 1]")
    if lam == 1.0:
        return p
    return LinearPredictor(p.coeffs * lam ** np.arange(1, p.order + 1))


def lpc_from_window(window: Sequence[float], order: int, lam: float = 1.0,
                    correction: float = WHITE_NOISE_CORRECTION) -> LinearPredictor:
    """Autocorrelation-method LPC for one analysis window.

    A silent window yields the zero predictor. ``r[0]`` is scaled by
    ``correction`` before the recursion.
    """
    w = np.asarray(window, dtype=np.float64)
    lags = min(order, w.shape[0] - 1)
    r = np.zeros(order + 1)
    if lags >= 0:
        r[:lags + 1] = autocorrelation(w, lags)
    if r[0] <= 0:
        return LinearPredictor.zeros(order)
    r[0] *= correction
    pred, _ = levinson_durbin(r, order)
    return bandwidth_expand(pred, lam)


def lms_predict(state: LmsState, history: Sequence[float]) -> float:
    """Prediction from the newest-first reconstructed history."""
    if len(history) != state.predictor.order:
        raise ValueError("history length must equal the predictor order")
    return state.predictor.predict(history)


def lms_update(state: LmsState, history: Sequence[float],
               quantized_error: float) -> LmsState:
    """One leaky normalized-LMS step driven by the quantized error.

    Only decoder-side quantities may be passed here, so encoder and decoder
    trajectories stay identical.
    """
    h = np.asarray(history, dtype=np.float64)
    if h.shape[0] != state.predictor.order:
        raise ValueError("history length must equal the predictor order")
    gain = state.step_size * quantized_error / (state.epsilon + np.dot(h, h))
    coeffs = state.leakage * state.predictor.coeffs + gain * h
    return replace(state, predictor=LinearPredictor(coeffs))

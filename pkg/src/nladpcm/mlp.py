"""The 10-2-1 multilayer perceptron used as a nonlinear speech predictor.

The network maps the ten most recent samples (newest first) to a
prediction of the next one::

    y = w2 . tanh(w1 @ history + b1) + b2

Training is plain full-batch gradient descent for a small, fixed number of
epochs. Stopping early is intentional: a lightly trained net generalizes
better and survives parameter quantization better than a converged one.

Descent runs on a copy of the frame scaled by a power of two close to its
RMS, and the scale is folded back into ``w1``, ``w2`` and ``b2`` afterwards.
Without it the output bias (curvature 1) and the input weights (curvature
of the order of the frame power) cannot share one learning rate. Power-of-two
scaling is exact, so the folded net computes the same function.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

N_INPUTS = 10
N_HIDDEN = 2
N_PARAMS = N_HIDDEN * N_INPUTS + N_HIDDEN + N_HIDDEN + 1


class GroupKind(enum.IntEnum):
    HIDDEN_WEIGHTS = 0
    HIDDEN_BIAS = 1
    OUTPUT_WEIGHTS = 2
    OUTPUT_BIAS = 3


GROUP_ORDER = (GroupKind.HIDDEN_WEIGHTS, GroupKind.HIDDEN_BIAS,
               GroupKind.OUTPUT_WEIGHTS, GroupKind.OUTPUT_BIAS)
GROUP_SIZES = {
    GroupKind.HIDDEN_WEIGHTS: N_HIDDEN * N_INPUTS,
    GroupKind.HIDDEN_BIAS: N_HIDDEN,
    GroupKind.OUTPUT_WEIGHTS: N_HIDDEN,
    GroupKind.OUTPUT_BIAS: 1,
}


@dataclass(frozen=True, eq=False)
class MlpPredictor:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float = 0.0

    def __post_init__(self):
        w1 = np.array(self.w1, dtype=np.float64).reshape(N_HIDDEN, N_INPUTS)
        b1 = np.array(self.b1, dtype=np.float64).reshape(N_HIDDEN)
        w2 = np.array(self.w2, dtype=np.float64).reshape(N_HIDDEN)
        b2 = float(self.b2)
        for a in (w1, b1, w2):
            a.setflags(write=False)
        if not (np.all(np.isfinite(w1)) and np.all(np.isfinite(b1))
                and np.all(np.isfinite(w2)) and np.isfinite(b2)):
            raise ValueError("MLP parameters must be finite")
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "b1", b1)
        object.__setattr__(self, "w2", w2)
        object.__setattr__(self, "b2", b2)

    @classmethod
    def zeros(cls) -> "MlpPredictor":
        return cls(np.zeros((N_HIDDEN, N_INPUTS)), np.zeros(N_HIDDEN), np.zeros(N_HIDDEN), 0.0)

    @classmethod
    def from_vector(cls, v) -> "MlpPredictor":
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (N_PARAMS,):
            raise ValueError(f"expected {N_PARAMS} parameters, got {v.shape}")
        return cls(v[:20], v[20:22], v[22:24], v[24])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2, [self.b2]])

    def __eq__(self, other):
        if not isinstance(other, MlpPredictor):
            return NotImplemented
        return np.array_equal(self.to_vector(), other.to_vector())

    def output_bound(self) -> float:
        return float(np.abs(self.w2).sum() + abs(self.b2))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learn_rate: float = 0.5
    init_scale: float = 0.1
    seed: int = 0
    gain_normalize: bool = True
    # frames quieter than this are trained at this scale rather than being
    # blown up to unit power, which bounds the folded weights
    gain_floor: float = 2.0 ** -5

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if not self.learn_rate > 0:
            raise ValueError("learn_rate must be positive")
        if not self.init_scale > 0:
            raise ValueError("init_scale must be positive")


@dataclass(frozen=True, eq=False)
class ParamGroup:
    kind: GroupKind
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).reshape(-1)
        kind = GroupKind(self.kind)
        if v.shape[0] != GROUP_SIZES[kind]:
            raise ValueError(f"{kind.name} group needs {GROUP_SIZES[kind]} values, got {v.shape[0]}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "values", v)


def mlp_forward(net: MlpPredictor, history: Sequence[float]) -> float:
    h = np.asarray(history, dtype=np.float64)
    if h.shape != (N_INPUTS,):
        raise ValueError(f"history must hold {N_INPUTS} samples")
    return float(net.w2 @ np.tanh(net.w1 @ h + net.b1) + net.b2)


def mlp_gradient(net: MlpPredictor, history: Sequence[float], target: float) -> MlpPredictor:
    """Gradient of ``0.5 * (mlp_forward(net, history) - target)**2``.

    Returned in the shape of an :class:`MlpPredictor`.
    """
    h = np.asarray(history, dtype=np.float64)
    if h.shape != (N_INPUTS,):
        raise ValueError(f"history must hold {N_INPUTS} samples")
    hidden = np.tanh(net.w1 @ h + net.b1)
    d = float(net.w2 @ hidden + net.b2) - target
    g_hidden = d * net.w2 * (1.0 - hidden * hidden)
    return MlpPredictor(np.outer(g_hidden, h), g_hidden, d * hidden, d)


def training_pairs(frame_samples: Sequence[float], history_seed: Sequence[float] = ()
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Build (inputs, targets) for every sample of the frame.

    ``history_seed`` holds the samples preceding the frame in time order
    (oldest first); missing samples are zeros. Input rows are newest first.
    """
    x = np.asarray(frame_samples, dtype=np.float64)
    seed = np.asarray(history_seed, dtype=np.float64)[-N_INPUTS:]
    ext = np.concatenate([np.zeros(N_INPUTS - seed.shape[0]), seed, x])
    n = x.shape[0]
    # row j: ext[j+9], ext[j+8], ..., ext[j]
    idx = np.arange(n)[:, None] + np.arange(N_INPUTS - 1, -1, -1)[None, :]
    return ext[idx], x


def init_network(config: TrainConfig) -> MlpPredictor:
    rng = np.random.default_rng(config.seed)
    return MlpPredictor.from_vector(rng.uniform(-config.init_scale, config.init_scale, N_PARAMS))


def batch_loss(net: MlpPredictor, inputs: np.ndarray, targets: np.ndarray) -> float:
    y = np.tanh(inputs @ net.w1.T + net.b1) @ net.w2 + net.b2
    return float(0.5 * np.mean((y - targets) ** 2))


def fit(net: MlpPredictor, inputs: np.ndarray, targets: np.ndarray, epochs: int,
        learn_rate: float, losses: list | None = None) -> MlpPredictor:
    """Full-batch gradient descent on the mean squared-error loss.

    An epoch whose step would raise the loss is undone and the learning
    rate halved for the rest of the run, so the loss never increases.
    If ``losses`` is given, the loss at the start of every epoch and at the
    end is appended to it.
    """
    n = targets.shape[0]
    if n == 0 or epochs == 0:
        return net
    params = [net.w1.copy(), net.b1.copy(), net.w2.copy(), np.array(net.b2)]

    def loss_and_grad(w1, b1, w2, b2):
        hidden = np.tanh(inputs @ w1.T + b1)
        d = hidden @ w2 + b2 - targets
        g_hidden = np.outer(d, w2) * (1.0 - hidden * hidden)
        grads = [(g_hidden.T @ inputs) / n, g_hidden.sum(axis=0) / n,
                 (hidden.T @ d) / n, np.array(d.sum() / n)]
        return 0.5 * float(d @ d) / n, grads

    lr = learn_rate
    with np.errstate(over="ignore", invalid="ignore"):
        loss, grads = loss_and_grad(*params)
        for _ in range(epochs):
            if losses is not None:
                losses.append(loss)
            trial = [p - lr * g for p, g in zip(params, grads)]
            trial_loss, trial_grads = loss_and_grad(*trial)
            if trial_loss <= loss:
                params, loss, grads = trial, trial_loss, trial_grads
            else:
                lr *= 0.5
    if losses is not None:
        losses.append(loss)
    return MlpPredictor(params[0], params[1], params[2], float(params[3]))


def gain_scale(inputs: np.ndarray, targets: np.ndarray, floor: float = 0.0) -> float:
    """Power of two nearest (in log terms) to the RMS of the training data."""
    if targets.shape[0] == 0:
        return 1.0
    window = np.concatenate([inputs[0, ::-1], targets])
    rms = float(np.sqrt(np.mean(window * window)))
    if rms == 0.0:
        return 1.0
    return max(float(2.0 ** np.round(np.log2(rms))), floor)


def scale_network(net: MlpPredictor, s: float) -> MlpPredictor:
    """Net for inputs and outputs divided by ``s`` (exact when ``s`` is 2**k)."""
    return MlpPredictor(net.w1 * s, net.b1, net.w2 / s, net.b2 / s)


def train_on_frame(config: TrainConfig, frame_samples: Sequence[float],
                   history_seed: Sequence[float] = (), losses: list | None = None
                   ) -> MlpPredictor:
    """Train a freshly initialized net to predict each sample of the frame.

    Deterministic given ``config.seed``. Reported ``losses`` are measured on
    the gain-normalized data when ``config.gain_normalize`` is set.
    """
    net = init_network(config)
    if config.epochs == 0:
        return net
    inputs, targets = training_pairs(frame_samples, history_seed)
    s = gain_scale(inputs, targets, config.gain_floor) if config.gain_normalize else 1.0
    if s == 1.0:
        return fit(net, inputs, targets, config.epochs, config.learn_rate, losses=losses)
    trained = fit(scale_network(net, s), inputs / s, targets / s, config.epochs,
                  config.learn_rate, losses=losses)
    return scale_network(trained, 1.0 / s)


def is_non_increasing(losses: Sequence[float], rtol: float = 1e-12) -> bool:
    """True when each epoch's loss does not exceed the previous one."""
    return all(b <= a * (1 + rtol) for a, b in zip(losses, losses[1:]))


def split_groups(net: MlpPredictor) -> list[ParamGroup]:
    return [
        ParamGroup(GroupKind.HIDDEN_WEIGHTS, net.w1.ravel()),
        ParamGroup(GroupKind.HIDDEN_BIAS, net.b1),
        ParamGroup(GroupKind.OUTPUT_WEIGHTS, net.w2),
        ParamGroup(GroupKind.OUTPUT_BIAS, [net.b2]),
    ]


def merge_groups(groups: Sequence[ParamGroup]) -> MlpPredictor:
    by_kind = {}
    for g in groups:
        if g.kind in by_kind:
            raise ValueError(f"duplicate group {g.kind.name}")
        if g.values.shape[0] != GROUP_SIZES[g.kind]:
            raise ValueError(f"{g.kind.name} group has wrong size")
        by_kind[g.kind] = g.values
    if set(by_kind) != set(GROUP_ORDER):
        raise ValueError("merge needs each parameter group exactly once")
    return MlpPredictor(by_kind[GroupKind.HIDDEN_WEIGHTS], by_kind[GroupKind.HIDDEN_BIAS],
                        by_kind[GroupKind.OUTPUT_WEIGHTS], by_kind[GroupKind.OUTPUT_BIAS][0])


@dataclass
class GroupDistribution:
    kind: GroupKind
    values: np.ndarray                     # pooled, sorted
    edges: np.ndarray
    counts: np.ndarray = field(repr=False)


def pool_parameters(nets: Sequence[MlpPredictor]) -> dict[GroupKind, np.ndarray]:
    """Sorted pooled values of every parameter group across ``nets``."""
    if len(nets) == 0:
        raise ValueError("empty network corpus")
    pools: dict[GroupKind, list] = {k: [] for k in GROUP_ORDER}
    for net in nets:
        for g in split_groups(net):
            pools[g.kind].append(g.values)
    return {k: np.sort(np.concatenate(v)) for k, v in pools.items()}


def collect_histograms(nets: Sequence[MlpPredictor], bins: int = 50
                       ) -> dict[GroupKind, GroupDistribution]:
    out = {}
    for kind, values in pool_parameters(nets).items():
        lo, hi = values[0], values[-1]
        if lo == hi:
            # point mass: one bin that is centred on the value
            lo, hi = lo - 0.5, hi + 0.5
        counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
        out[kind] = GroupDistribution(kind, values, edges, counts)
    return out

import os

import numpy as np
import pytest

from nladpcm.signal_io import PcmSignal, load_corpus, load_pcm

DATA = os.path.join(os.path.dirname(__file__), "data", "speech")
TRAIN_DIR = os.environ.get("NLADPCM_SPEECH_TRAIN", os.path.join(DATA, "train"))
TEST_DIR = os.environ.get("NLADPCM_SPEECH_TEST", os.path.join(DATA, "test"))


def ar_source(coeffs, n, seed=0, scale=0.05):
    """AR process x(n) = sum_k a_k x(n-k) + w(n), driven by Gaussian noise."""
    from scipy.signal import lfilter
    rng = np.random.default_rng(seed)
    a = np.asarray(coeffs, dtype=np.float64)
    return lfilter([1.0], np.r_[1.0, -a], rng.standard_normal(n)) * scale


# a speech-like stable AR(10) (an LPC fit of speech, pole radius 0.904)
AR10 = np.array([1.028, 0.196, -0.300, -0.149, -0.016, 0.039, 0.019, -0.046, 0.215, -0.191])


@pytest.fixture(scope="session")
def speech_excerpt():
    """About a quarter second of voiced speech from the held-out set."""
    sig = load_pcm(os.path.join(TEST_DIR, "numbers.wav"))
    return PcmSignal(sig.samples[4000:6000], sig.sample_rate_hz)


@pytest.fixture(scope="session")
def test_corpus():
    return load_corpus([TEST_DIR])


@pytest.fixture(scope="session")
def train_corpus():
    return load_corpus([TRAIN_DIR])


@pytest.fixture(scope="session")
def train_nets(train_corpus):
    """Per-frame forward nets (frame 200, default training) over the training set."""
    from nladpcm.codec import CodecConfig, Scheme
    from nladpcm.experiments import frame_nets
    return frame_nets(CodecConfig(scheme=Scheme.FORWARD_NL, frame_len=200), train_corpus)


@pytest.fixture(scope="session")
def train_pools(train_nets):
    from nladpcm.mlp import pool_parameters
    return pool_parameters(train_nets)


# one summary line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

"""Speech corpus I/O: loading 16-bit PCM, concatenation and framing."""

from __future__ import annotations

import os
import wave
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DEFAULT_SAMPLE_RATE = 8000
FULL_SCALE = 32768.0


class SignalError(ValueError):
    """Raised for unreadable or malformed speech input."""


@dataclass(frozen=True, eq=False)
class PcmSignal:
    """Mono speech samples normalized to [-1, 1)."""

    samples: np.ndarray
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        x = np.ascontiguousarray(self.samples, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(x)):
            raise SignalError("samples must be finite")
        if int(self.sample_rate_hz) <= 0:
            raise SignalError("sample_rate_hz must be positive")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def __eq__(self, other) -> bool:
        if not isinstance(other, PcmSignal):
            return NotImplemented
        return (self.sample_rate_hz == other.sample_rate_hz
                and np.array_equal(self.samples, other.samples))


@dataclass(frozen=True)
class FrameView:
    start_index: int
    length: int

    @property
    def stop_index(self) -> int:
        return self.start_index + self.length

    def slice(self) -> slice:
        return slice(self.start_index, self.start_index + self.length)


def _from_int16(raw: bytes) -> np.ndarray:
    if len(raw) % 2:
        raise SignalError("raw16le data has an odd number of bytes")
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / FULL_SCALE


def load_pcm(path: str | os.PathLike, format: str | None = None,
             sample_rate_hz: int = DEFAULT_SAMPLE_RATE) -> PcmSignal:
    """Load a 16-bit mono file as a normalized :class:`PcmSignal`.

    ``format`` is ``"wav16-mono"`` or ``"raw16le"``; if omitted it is
    guessed from the file extension. For WAV files the rate stored in the
    header wins over ``sample_rate_hz``.
    """
    path = os.fspath(path)
    if format is None:
        format = "wav16-mono" if path.lower().endswith(".wav") else "raw16le"
    if format == "raw16le":
        try:
            with open(path, "rb") as fh:
                raw = fh.read()
        except OSError as exc:
            raise SignalError(f"cannot read {path}: {exc}") from exc
        return PcmSignal(_from_int16(raw), sample_rate_hz)
    if format != "wav16-mono":
        raise SignalError(f"unsupported format {format!r}")
    try:
        with wave.open(path, "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (OSError, EOFError, wave.Error) as exc:
        raise SignalError(f"cannot read {path}: {exc}") from exc
    if channels != 1:
        raise SignalError(f"{path}: mono required, got {channels} channels")
    if width != 2:
        raise SignalError(f"{path}: unsupported bit depth {8 * width}")
    return PcmSignal(_from_int16(raw), rate)


def to_int16(signal: PcmSignal) -> np.ndarray:
    scaled = np.round(signal.samples * FULL_SCALE)
    return np.clip(scaled, -32768, 32767).astype("<i2")


def write_pcm(signal: PcmSignal, path: str | os.PathLike,
              format: str | None = None) -> None:
    path = os.fspath(path)
    if format is None:
        format = "wav16-mono" if path.lower().endswith(".wav") else "raw16le"
    data = to_int16(signal).tobytes()
    if format == "raw16le":
        with open(path, "wb") as fh:
            fh.write(data)
    elif format == "wav16-mono":
        with wave.open(path, "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(2)
            wf.setframerate(signal.sample_rate_hz)
            wf.writeframes(data)
    else:
        raise SignalError(f"unsupported format {format!r}")


def concat_corpus(signals: Sequence[PcmSignal]) -> PcmSignal:
    signals = list(signals)
    if not signals:
        raise SignalError("empty corpus")
    rates = {s.sample_rate_hz for s in signals}
    if len(rates) != 1:
        raise SignalError(f"mixed sample rates: {sorted(rates)}")
    return PcmSignal(np.concatenate([s.samples for s in signals]), rates.pop())


def load_corpus(paths: Iterable[str | os.PathLike],
                sample_rate_hz: int = DEFAULT_SAMPLE_RATE) -> PcmSignal:
    """Load every file (or every .wav/.raw in each directory) and concatenate."""
    files = []
    for p in paths:
        p = os.fspath(p)
        if os.path.isdir(p):
            files.extend(os.path.join(p, f) for f in sorted(os.listdir(p))
                         if f.lower().endswith((".wav", ".raw")))
        else:
            files.append(p)
    if not files:
        raise SignalError("no speech files found")
    return concat_corpus([load_pcm(f, sample_rate_hz=sample_rate_hz) for f in files])


def frames(signal: PcmSignal | int, frame_len: int) -> list[FrameView]:
    """Split into contiguous frames; the last one keeps its true length."""
    if frame_len < 1:
        raise ValueError("frame_len must be >= 1")
    n = signal if isinstance(signal, int) else len(signal)
    return [FrameView(s, min(frame_len, n - s)) for s in range(0, n, frame_len)]

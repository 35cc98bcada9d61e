"""Monaural WAV reading/writing and band-limited resampling.

All waveform data enters and leaves the engine through this module.
Samples are kept as float64 in [-1, 1] internally; files are PCM16 or
IEEE float32 RIFF/WAVE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.io import wavfile


class UnsupportedFormat(ValueError):
    """File is not mono PCM16/float32 RIFF/WAVE."""


KAISER_BETA = 8.6
TAPS_PER_PHASE = 64


@dataclass
class Waveform:
    """Mono audio: samples in [-1, 1], a sample rate, and an utterance id."""

    samples: np.ndarray
    sample_rate: int
    id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain NaN or Inf")

    @property
    def duration_seconds(self) -> float:
        return len(self.samples) / self.sample_rate

    def power(self) -> float:
        """Mean squared amplitude."""
        if len(self.samples) == 0:
            return 0.0
        return float(np.mean(self.samples**2))


def read_wav(path: str | Path) -> Waveform:
    """Read a mono PCM16 or float32 WAV file.

    PCM16 samples are scaled by 1/32768; float32 is taken as-is.
    Raises FileNotFoundError for a missing file and UnsupportedFormat for
    stereo files or unsupported sample encodings.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        rate, data = wavfile.read(str(path))
    except ValueError as exc:
        raise UnsupportedFormat(f"{path}: {exc}") from exc
    if data.ndim != 1:
        raise UnsupportedFormat(f"{path}: expected mono audio, got {data.ndim} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedFormat(f"{path}: unsupported sample format {data.dtype}")
    return Waveform(samples=samples, sample_rate=int(rate), id=path.stem)


def write_wav(wave: Waveform, path: str | Path, pcm16: bool = False) -> None:
    """Write a Waveform as float32 (default, lossless) or PCM16.

    A float32 round trip is bit-identical; PCM16 quantizes within 1/32768
    per sample.
    """
    path = Path(path)
    if pcm16:
        quantized = np.clip(np.round(wave.samples * 32768.0), -32768, 32767)
        data = quantized.astype(np.int16)
    else:
        data = wave.samples.astype(np.float32)
    try:
        wavfile.write(str(path), wave.sample_rate, data)
    except OSError as exc:
        raise IOError(f"cannot write {path}: {exc}") from exc


def output_length(n: int, source_rate: int, target_rate: int) -> int:
    """Resampled length: round-half-up of n * target / source."""
    return (2 * n * target_rate + source_rate) // (2 * source_rate)


def _design_filter(up: int, down: int) -> np.ndarray:
    ntaps = TAPS_PER_PHASE * up
    cutoff = 1.0 / max(up, down)
    h = signal.firwin(ntaps, cutoff, window=("kaiser", KAISER_BETA), fs=2.0)
    return h * up


def resample_samples(x: np.ndarray, up: int, down: int) -> np.ndarray:
    """Polyphase windowed-sinc resampling by the rational factor up/down."""
    g = math.gcd(up, down)
    up, down = up // g, down // g
    if up == down:
        return np.array(x, dtype=np.float64)
    return signal.resample_poly(x, up, down, window=_design_filter(up, down))


def resample(wave: Waveform, target_rate: int) -> Waveform:
    """Resample to target_rate; output length is round(len * target / source)."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == wave.sample_rate:
        return Waveform(wave.samples.copy(), wave.sample_rate, wave.id)
    n_out = output_length(len(wave.samples), wave.sample_rate, target_rate)
    y = resample_samples(wave.samples, target_rate, wave.sample_rate)
    if len(y) < n_out:
        y = np.pad(y, (0, n_out - len(y)))
    return Waveform(y[:n_out], target_rate, wave.id)

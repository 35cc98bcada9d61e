"""MFCC front-end, normalization, context splicing, and the feature archive.

The front-end follows the classic recipe: per-frame pre-emphasis, Hamming
window, power spectrum, triangular mel filter bank on the mel scale
2595*log10(1 + f/700), floored log, orthonormal DCT-II. Cepstral c0 is kept
and no deltas are appended; frame stacking is done by :func:`splice`.

Archives use the ``FEA1`` container: a little-endian binary holding any
number of named float32 matrices together with their frame shift. The same
container is produced by external feature extractors, so the layout here is
a compatibility contract, not an implementation detail.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from .audio_io import Waveform

ARCHIVE_MAGIC = b"FEA1"
ARCHIVE_VERSION = 1

VAR_FLOOR = 1e-10


class TooShort(ValueError):
    """Waveform shorter than a single analysis frame."""


class CorruptArchive(ValueError):
    """Archive bytes do not parse: bad magic, bad version, or truncation."""


class DuplicateUttId(ValueError):
    """Two matrices in one archive share an utterance id."""


@dataclass
class FeatureMatrix:
    """A (T, dim) matrix of per-frame feature vectors for one utterance."""

    data: np.ndarray
    frame_shift: float
    utt_id: str = ""

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise ValueError("feature data must be a (T, dim) matrix with T >= 1")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("feature data must be finite")
        if self.frame_shift <= 0:
            raise ValueError("frame_shift must be positive")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class MfccConfig:
    """Front-end settings; defaults give 13 cepstra per 10 ms frame."""

    frame_len_ms: float = 20.0
    frame_shift_ms: float = 10.0
    window: str = "hamming"
    n_mels: int = 40
    n_ceps: int = 13
    fmin: float = 20.0
    fmax: float | None = None
    preemph: float = 0.97
    dither: float = 0.0
    log_floor: float = 1e-10

    def __post_init__(self) -> None:
        if self.n_ceps > self.n_mels:
            raise ValueError("n_ceps must not exceed n_mels")
        if self.frame_len_ms <= 0 or self.frame_shift_ms <= 0:
            raise ValueError("frame lengths must be positive")
        if self.window not in ("hamming", "hann", "rectangular"):
            raise ValueError(f"unknown window {self.window!r}")


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    n_mels: int, n_fft: int, sample_rate: float, fmin: float, fmax: float
) -> np.ndarray:
    """Triangular filters, (n_mels, n_fft//2 + 1), triangles linear in mel."""
    if fmax > sample_rate / 2:
        raise ValueError("fmax must not exceed the Nyquist frequency")
    points = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    bin_mels = hz_to_mel(np.arange(n_fft // 2 + 1) * sample_rate / n_fft)
    lower = points[:-2, None]
    center = points[1:-1, None]
    upper = points[2:, None]
    rising = (bin_mels[None, :] - lower) / (center - lower)
    falling = (upper - bin_mels[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def _window(name: str, length: int) -> np.ndarray:
    if name == "hamming":
        return np.hamming(length)
    if name == "hann":
        return np.hanning(length)
    return np.ones(length)


def frame_count(n_samples: int, frame_len: int, frame_shift: int) -> int:
    if n_samples < frame_len:
        return 0
    return 1 + (n_samples - frame_len) // frame_shift


def compute_mfcc(wave: Waveform, cfg: MfccConfig = MfccConfig()) -> FeatureMatrix:
    """Extract (T, n_ceps) cepstra from a waveform.

    T = 1 + floor((len - frame_len) / shift); trailing samples that do not
    fill a frame are dropped.
    """
    sr = wave.sample_rate
    flen = int(round(cfg.frame_len_ms * sr / 1000.0))
    fshift = int(round(cfg.frame_shift_ms * sr / 1000.0))
    if len(wave.samples) < flen:
        raise TooShort(
            f"waveform has {len(wave.samples)} samples, frame needs {flen}"
        )
    fmax = sr / 2.0 if cfg.fmax is None else cfg.fmax

    n = frame_count(len(wave.samples), flen, fshift)
    idx = np.arange(flen)[None, :] + fshift * np.arange(n)[:, None]
    frames = wave.samples[idx]

    if cfg.dither > 0.0:
        # Seed from the utterance id so extraction is order-independent.
        rng = np.random.default_rng(zlib.crc32(wave.id.encode("utf-8")))
        frames = frames + cfg.dither * rng.standard_normal(frames.shape)

    emph = frames.copy()
    emph[:, 1:] -= cfg.preemph * frames[:, :-1]
    emph[:, 0] *= 1.0 - cfg.preemph

    n_fft = 1 << (flen - 1).bit_length()
    spec = np.fft.rfft(emph * _window(cfg.window, flen), n_fft, axis=1)
    power = spec.real**2 + spec.imag**2

    fbank = mel_filterbank(cfg.n_mels, n_fft, sr, cfg.fmin, fmax)
    log_mels = np.log(np.maximum(power @ fbank.T, cfg.log_floor))
    ceps = dct(log_mels, type=2, norm="ortho", axis=1)[:, : cfg.n_ceps]
    return FeatureMatrix(ceps, cfg.frame_shift_ms / 1000.0, wave.id)


def splice(feats: FeatureMatrix, context: int) -> FeatureMatrix:
    """Stack each frame with its +-context neighbours, repeating edge frames."""
    if context < 0:
        raise ValueError("context must be >= 0")
    if context == 0:
        return FeatureMatrix(feats.data.copy(), feats.frame_shift, feats.utt_id)
    t, d = feats.data.shape
    offsets = np.arange(-context, context + 1)
    idx = np.clip(np.arange(t)[:, None] + offsets[None, :], 0, t - 1)
    stacked = feats.data[idx].reshape(t, d * (2 * context + 1))
    return FeatureMatrix(stacked, feats.frame_shift, feats.utt_id)


def apply_cmvn(feats: FeatureMatrix) -> FeatureMatrix:
    """Per-utterance, per-dimension mean and variance normalization."""
    mu = feats.data.mean(axis=0)
    var = feats.data.var(axis=0)
    out = (feats.data - mu) / np.sqrt(var + VAR_FLOOR)
    return FeatureMatrix(out, feats.frame_shift, feats.utt_id)


def write_archive(feats_list, path) -> None:
    """Write matrices to a FEA1 archive; values are narrowed to float32."""
    seen: set[str] = set()
    for fm in feats_list:
        if fm.utt_id in seen:
            raise DuplicateUttId(f"duplicate utterance id {fm.utt_id!r}")
        seen.add(fm.utt_id)
    with open(path, "wb") as f:
        f.write(ARCHIVE_MAGIC)
        f.write(struct.pack("<II", ARCHIVE_VERSION, len(feats_list)))
        for fm in feats_list:
            ident = fm.utt_id.encode("utf-8")
            if len(ident) > 0xFFFF:
                raise ValueError("utterance id longer than 65535 bytes")
            t, d = fm.data.shape
            f.write(struct.pack("<H", len(ident)))
            f.write(ident)
            f.write(struct.pack("<IIf", t, d, fm.frame_shift))
            f.write(np.ascontiguousarray(fm.data, dtype="<f4").tobytes())


def read_archive(path) -> list[FeatureMatrix]:
    """Read back every matrix in a FEA1 archive, in file order."""
    with open(path, "rb") as f:
        blob = f.read()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CorruptArchive(f"truncated archive: needed {n} bytes at {pos}")
        out = blob[pos : pos + n]
        pos += n
        return out

    if take(4) != ARCHIVE_MAGIC:
        raise CorruptArchive("bad magic")
    version, count = struct.unpack("<II", take(8))
    if version != ARCHIVE_VERSION:
        raise CorruptArchive(f"unsupported version {version}")
    out: list[FeatureMatrix] = []
    seen: set[str] = set()
    for _ in range(count):
        (id_len,) = struct.unpack("<H", take(2))
        utt_id = take(id_len).decode("utf-8")
        t, d, frame_shift = struct.unpack("<IIf", take(12))
        data = np.frombuffer(take(4 * t * d), dtype="<f4").reshape(t, d)
        if utt_id in seen:
            raise DuplicateUttId(f"duplicate utterance id {utt_id!r}")
        seen.add(utt_id)
        out.append(FeatureMatrix(data, float(frame_shift), utt_id))
    if pos != len(blob):
        raise CorruptArchive(f"{len(blob) - pos} trailing bytes after last record")
    return out

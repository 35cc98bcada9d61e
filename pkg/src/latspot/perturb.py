"""Waveform perturbations: noise mixing, rate/pitch change, formant shifts.

Rate and pitch changes run on an STFT magnitude grid with iterative phase
reconstruction (committed past frames plus a short look-ahead, a few
Griffin-Lim updates per frame). Formant shifts scale the pole angles of a
frame-wise LP synthesis filter by (1 + alpha), so alpha = 0.1 moves
resonances up by 10%. Noise mixing controls the SNR of the unclipped sum;
clipping is applied afterwards and reported with a warning.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.signal import lfilter

from .audio_io import Waveform, resample_samples

LOOK_AHEAD = 2
ITERATIONS = 8
COLA_TOL = 1e-10
POLE_CLAMP = 0.998


class FactorOutOfRange(ValueError):
    """Rate or pitch factor outside the supported open interval (0.5, 2.0)."""


class AlphaOutOfRange(ValueError):
    """Formant shift alpha outside [-0.3, 0.3]."""


class UnstableFilter(RuntimeError):
    """LP pole processing produced non-finite roots; input frame is broken."""


class RateMismatch(ValueError):
    """Speech and noise sample rates differ."""


class SilentSpeech(ValueError):
    """Speech power is zero; SNR is undefined."""


class SilentNoise(ValueError):
    """Noise (after looping to speech length) has zero power."""


class ClippedWarning(UserWarning):
    """Mixing drove samples outside [-1, 1]; they were hard-clipped."""


def periodic_hann(length: int) -> np.ndarray:
    n = np.arange(length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)


def cola_error(window: np.ndarray, hop: int) -> float:
    """Relative deviation of the squared-window overlap-add from constant."""
    n = len(window)
    reps = 4 * (n // hop) + 8
    acc = np.zeros(reps * hop + n)
    for m in range(reps):
        acc[m * hop : m * hop + n] += window**2
    interior = acc[n : reps * hop]
    ref = np.median(interior)
    return float(np.max(np.abs(interior - ref)) / ref)


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis grid; the squared window must overlap-add flat."""

    frame_len: int = 512
    hop: int = 128
    fft_size: int = 512
    window: str = "hann"

    def __post_init__(self) -> None:
        if not (0 < self.hop <= self.frame_len <= self.fft_size):
            raise ValueError("need 0 < hop <= frame_len <= fft_size")
        if self.window != "hann":
            raise ValueError("only the Hann window satisfies the synthesis identity here")
        if cola_error(periodic_hann(self.frame_len), self.hop) > COLA_TOL:
            raise ValueError("window/hop pair is not COLA-compliant")

    @classmethod
    def for_rate(cls, sample_rate: float) -> "StftConfig":
        """32 ms frames, 8 ms hop, rounded so frame_len is exactly 4 hops."""
        hop = int(round(8e-3 * sample_rate))
        frame = 4 * hop
        fft = 1 << (frame - 1).bit_length()
        return cls(frame_len=frame, hop=hop, fft_size=fft)


@dataclass(frozen=True)
class PerturbSpec:
    """One perturbation: kind selects the operation, factor its strength.

    factor means a multiplicative pitch/rate factor, the formant alpha, or
    the target SNR in dB depending on kind.
    """

    kind: str
    factor: float
    noise_source: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("pitch", "rate", "formant", "noise"):
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.kind in ("pitch", "rate") and not 0.5 < self.factor < 2.0:
            raise FactorOutOfRange(f"{self.kind} factor {self.factor} not in (0.5, 2.0)")
        if self.kind == "formant" and not -0.3 <= self.factor <= 0.3:
            raise AlphaOutOfRange(f"alpha {self.factor} not in [-0.3, 0.3]")
        if self.kind == "noise" and not np.isfinite(self.factor):
            raise ValueError("SNR must be finite")


def mix_noise(
    speech: Waveform, noise: Waveform, snr_db: float, seed: int | None = None
) -> Waveform:
    """Add noise at an exact SNR; loop or truncate the noise to fit.

    With a seed the looped noise starts at a random offset, otherwise at 0.
    """
    if speech.sample_rate != noise.sample_rate:
        raise RateMismatch(
            f"speech at {speech.sample_rate} Hz, noise at {noise.sample_rate} Hz"
        )
    p_speech = speech.power()
    if p_speech == 0.0:
        raise SilentSpeech("speech power is zero")
    if noise.power() == 0.0:
        raise SilentNoise("noise power is zero")
    n = len(speech.samples)
    offset = 0
    if seed is not None:
        offset = int(np.random.default_rng(seed).integers(0, len(noise.samples)))
    reps = -(-(n + offset) // len(noise.samples))
    looped = np.tile(noise.samples, reps)[offset : offset + n]
    p_noise = float(np.mean(looped**2))
    if p_noise == 0.0:
        raise SilentNoise("noise slice has zero power")
    gain = float(np.sqrt(p_speech / (p_noise * 10.0 ** (snr_db / 10.0))))
    mix = speech.samples + gain * looped
    if np.any(np.abs(mix) > 1.0):
        warnings.warn(
            f"{int(np.sum(np.abs(mix) > 1.0))} samples clipped", ClippedWarning
        )
        mix = np.clip(mix, -1.0, 1.0)
    return Waveform(mix, speech.sample_rate, speech.id)


def _stft(x: np.ndarray, cfg: StftConfig, window: np.ndarray) -> np.ndarray:
    n_frames = 1 + (len(x) - cfg.frame_len) // cfg.hop
    idx = np.arange(cfg.frame_len)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    return np.fft.rfft(x[idx] * window, cfg.fft_size, axis=1)


def modify_rate(wave: Waveform, factor: float, cfg: StftConfig | None = None) -> Waveform:
    """Change duration by 1/factor while keeping the spectral content.

    Target magnitudes come from linear interpolation of the analysis frames
    along time; phases start from the nearest analysis frame and are refined
    frame by frame with look-ahead before each frame is committed.
    """
    if not 0.5 < factor < 2.0:
        raise FactorOutOfRange(f"rate factor {factor} not in (0.5, 2.0)")
    if cfg is None:
        cfg = StftConfig.for_rate(wave.sample_rate)
    window = periodic_hann(cfg.frame_len)
    flen, hop = cfg.frame_len, cfg.hop

    # Reflection keeps edge analysis frames full of signal-like content, so
    # their phases are meaningful; zero padding would seed the phase
    # accumulation below with noise.
    x = np.pad(wave.samples, (flen, flen), mode="reflect")
    spectra = _stft(x, cfg, window)
    mags = np.abs(spectra)
    phases = np.angle(spectra)
    n_ana = len(spectra)

    n_syn = int(np.floor((n_ana - 1) / factor)) + 1
    q = np.arange(n_syn) * factor
    lo = np.floor(q).astype(int)
    hi = np.minimum(lo + 1, n_ana - 1)
    frac = (q - lo)[:, None]
    target_mag = (1.0 - frac) * mags[lo] + frac * mags[hi]

    # Seed phases by accumulating one-analysis-hop phase increments, so the
    # per-hop advance matches the local instantaneous frequency and pitch is
    # preserved. The accumulation fixes advances but not absolute phase, so
    # a per-bin constant then pins the field to the analysis phases at the
    # first frame of unpadded content (with a sub-hop instantaneous
    # frequency correction for the fractional anchor position). At factor 1
    # everything telescopes to the analysis phases and reconstruction is
    # exact.
    n_bins = mags.shape[1]
    near = np.minimum(np.round(q).astype(int), n_ana - 1)
    acc = np.empty((n_syn, n_bins))
    acc[0] = phases[near[0]]
    for s in range(1, n_syn):
        r = max(near[s], 1)
        acc[s] = acc[s - 1] + phases[r] - phases[r - 1]
    s_anchor = min(n_syn - 1, int(round((flen / hop) / factor)))
    m_anchor = max(1, near[s_anchor])
    expected = 2.0 * np.pi * np.arange(n_bins) * hop / cfg.fft_size
    dev = phases[m_anchor] - phases[m_anchor - 1] - expected
    inst = expected + np.mod(dev + np.pi, 2.0 * np.pi) - np.pi
    delta = phases[m_anchor] - acc[s_anchor] + inst * (s_anchor - m_anchor / factor)
    init_phase = acc + delta[None, :]

    # Time-domain copies of every synthesis frame, refreshed as phases move.
    frames_sig = np.empty((n_syn, flen))
    spec = target_mag * np.exp(1j * init_phase)
    for s in range(n_syn):
        frames_sig[s] = np.fft.irfft(spec[s], cfg.fft_size)[:flen]

    out_len = (n_syn - 1) * hop + flen
    committed = np.zeros(out_len)
    committed_w = np.zeros(out_len)
    wsq = window**2
    eps = 1e-12

    for c in range(n_syn):
        active = range(c, min(c + LOOK_AHEAD, n_syn - 1) + 1)
        for _ in range(ITERATIONS):
            for a in active:
                seg = slice(a * hop, a * hop + flen)
                num = committed[seg].copy()
                den = committed_w[seg].copy()
                for b in active:
                    lo_b, hi_b = b * hop, b * hop + flen
                    ov_lo = max(lo_b, a * hop)
                    ov_hi = min(hi_b, a * hop + flen)
                    if ov_lo >= ov_hi:
                        continue
                    rel_a = slice(ov_lo - a * hop, ov_hi - a * hop)
                    rel_b = slice(ov_lo - lo_b, ov_hi - lo_b)
                    num[rel_a] += window[rel_b] * frames_sig[b][rel_b]
                    den[rel_a] += wsq[rel_b]
                est = num / np.maximum(den, eps)
                ph = np.angle(np.fft.rfft(est * window, cfg.fft_size))
                frames_sig[a] = np.fft.irfft(
                    target_mag[a] * np.exp(1j * ph), cfg.fft_size
                )[:flen]
        seg = slice(c * hop, c * hop + flen)
        committed[seg] += window * frames_sig[c]
        committed_w[seg] += wsq

    signal = committed / np.maximum(committed_w, eps)
    start = int(round(flen / factor))
    target_len = int(round(len(wave.samples) / factor))
    if start + target_len > len(signal):
        signal = np.pad(signal, (0, start + target_len - len(signal)))
    return Waveform(signal[start : start + target_len], wave.sample_rate, wave.id)


def modify_pitch(wave: Waveform, factor: float, cfg: StftConfig | None = None) -> Waveform:
    """Scale the fundamental by factor while keeping the duration.

    Resampling by 1/factor shifts all frequencies by factor and stretches
    time; a rate change by 1/factor then restores the duration.
    """
    if not 0.5 < factor < 2.0:
        raise FactorOutOfRange(f"pitch factor {factor} not in (0.5, 2.0)")
    ratio = Fraction(factor).limit_denominator(1000)
    up, down = ratio.denominator, ratio.numerator
    stretched = Waveform(
        resample_samples(wave.samples, up, down), wave.sample_rate, wave.id
    )
    return modify_rate(stretched, 1.0 / factor, cfg)


def autocorrelation(x: np.ndarray, order: int) -> np.ndarray:
    n_fft = 1 << (2 * len(x) - 1).bit_length()
    spec = np.fft.rfft(x, n_fft)
    r = np.fft.irfft(spec.real**2 + spec.imag**2, n_fft)
    return r[: order + 1]


def levinson_durbin(r: np.ndarray, order: int) -> np.ndarray:
    """Solve the Toeplitz normal equations; returns [1, a1, ..., a_order]."""
    a = np.zeros(order + 1)
    a[0] = 1.0
    err = r[0]
    if err <= 0.0:
        return a
    for i in range(1, order + 1):
        acc = r[i] + np.dot(a[1:i], r[i - 1 : 0 : -1])
        k = -acc / err
        prev = a[1:i].copy()
        a[1:i] = prev + k * prev[::-1]
        a[i] = k
        err *= 1.0 - k * k
        if err <= 0.0:
            break
    return a


def shift_poles(a: np.ndarray, alpha: float) -> np.ndarray:
    """Scale complex pole angles by (1 + alpha); keep the filter real/stable."""
    roots = np.roots(a)
    if not np.all(np.isfinite(roots)):
        raise UnstableFilter("non-finite LP roots")
    out = []
    for r in roots:
        # Magnitudes are kept; only a pole at or past the unit circle is
        # pulled back inside.
        if abs(r.imag) <= 1e-9:
            mag = abs(r.real)
            mag = POLE_CLAMP if mag >= 1.0 else mag
            out.append(np.copysign(mag, r.real) if r.real != 0.0 else 0.0)
            continue
        if r.imag < 0:
            continue  # rebuilt from the conjugate partner
        mag = abs(r)
        mag = POLE_CLAMP if mag >= 1.0 else mag
        theta = np.clip(np.angle(r) * (1.0 + alpha), 1e-4, np.pi - 1e-4)
        shifted = mag * np.exp(1j * theta)
        out.extend([shifted, np.conj(shifted)])
    coeffs = np.real(np.poly(out))
    return coeffs


def modify_formants(
    wave: Waveform, alpha: float, lp_order: int | None = None
) -> Waveform:
    """Shift resonances by scaling LP pole angles; alpha = 0 is (near) identity."""
    if not -0.3 <= alpha <= 0.3:
        raise AlphaOutOfRange(f"alpha {alpha} not in [-0.3, 0.3]")
    sr = wave.sample_rate
    if lp_order is None:
        lp_order = 2 + int(round(sr / 1000.0))
    flen = 4 * int(round(8e-3 * sr))
    hop = flen // 2
    window = periodic_hann(flen)

    x = np.pad(wave.samples, (flen, flen))
    n_frames = 1 + (len(x) - flen) // hop
    out = np.zeros(len(x))
    wsum = np.zeros(len(x))
    for m in range(n_frames):
        seg = x[m * hop : m * hop + flen]
        r = autocorrelation(seg * window, lp_order)
        if r[0] <= 0.0:
            y = seg
        else:
            r = r.copy()
            r[0] *= 1.0 + 1e-9
            a = levinson_durbin(r, lp_order)
            residual = lfilter(a, [1.0], seg)
            shifted = shift_poles(a, alpha)
            y = lfilter([1.0], shifted, residual)
        out[m * hop : m * hop + flen] += window * y
        wsum[m * hop : m * hop + flen] += window
    signal = out / np.maximum(wsum, 1e-12)
    return Waveform(signal[flen : flen + len(wave.samples)], sr, wave.id)


def apply_perturb(
    wave: Waveform,
    spec: PerturbSpec,
    noise: Waveform | None = None,
    cfg: StftConfig | None = None,
    seed: int | None = None,
) -> Waveform:
    """Dispatch one PerturbSpec against a waveform."""
    if spec.kind == "noise":
        if noise is None:
            raise ValueError("noise perturbation needs a noise waveform")
        return mix_noise(wave, noise, spec.factor, seed=seed)
    if spec.kind == "rate":
        return modify_rate(wave, spec.factor, cfg)
    if spec.kind == "pitch":
        return modify_pitch(wave, spec.factor, cfg)
    return modify_formants(wave, spec.factor)

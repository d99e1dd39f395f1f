"""Audio synthesis, STFT analysis, resampling and silence trimming.

All spectra carry physical units: column ``j`` of a
:class:`MagnitudeSpectrogram` sits at ``j * sample_rate / n_fft`` Hz and
frame times are in seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.io import wavfile

from .errors import EmptyClipError, ParameterError, UnsupportedInput


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    label: Optional[int] = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ParameterError(f"expected mono samples, got shape {self.samples.shape}")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ParameterError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        if not np.all(np.isfinite(self.samples)):
            raise ParameterError("samples contain non-finite values")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class MagnitudeSpectrogram:
    frames: np.ndarray  # [T, n_fft // 2 + 1]
    n_fft: int
    hop: int
    sample_rate: int
    frame_times: np.ndarray
    window_length: int = 0  # samples actually windowed; < n_fft when zero padded

    def __post_init__(self):
        if not self.window_length:
            self.window_length = self.n_fft

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(self.frames.shape[1]) * (self.sample_rate / self.n_fft)


# ---------------------------------------------------------------------------
# Synthesis
# ---------------------------------------------------------------------------


def _check_band(band, sample_rate):
    lo, hi = float(band[0]), float(band[1])
    if not (0.0 <= lo < hi <= sample_rate / 2):
        raise ParameterError(f"band [{lo}, {hi}] Hz must satisfy 0 <= lo < hi <= {sample_rate / 2}")
    return lo, hi


def make_spectral_noise(
    bands: Sequence[Sequence[float]],
    sample_rate: int,
    duration: float,
    seed: int,
    gains: Optional[Sequence[float]] = None,
    normalize: bool = True,
) -> AudioClip:
    """Random-phase noise whose spectrum is flat inside ``bands`` and zero elsewhere.

    Built in the frequency domain, so energy outside the bands is exactly zero
    for the clip-length DFT.  ``gains`` are linear amplitudes per band.
    """
    if duration <= 0:
        raise ParameterError(f"duration must be positive, got {duration}")
    n = int(round(duration * sample_rate))
    if n < 2:
        raise ParameterError("duration too short for the sample rate")
    gains = [1.0] * len(bands) if gains is None else list(gains)
    if len(gains) != len(bands):
        raise ParameterError("one gain per band required")
    rng = np.random.default_rng(seed)
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    amp = np.zeros_like(freqs)
    for band, gain in zip(bands, gains):
        lo, hi = _check_band(band, sample_rate)
        inside = (freqs >= lo) & (freqs <= hi)
        amp[inside] = np.maximum(amp[inside], gain)
    if not amp.any():
        raise ParameterError("bands contain no DFT bin at this duration")
    phase = rng.uniform(0.0, 2.0 * np.pi, size=freqs.size)
    spectrum = amp * np.exp(1j * phase)
    spectrum[0] = spectrum[0].real
    if n % 2 == 0:
        spectrum[-1] = spectrum[-1].real
    x = np.fft.irfft(spectrum, n=n)
    if normalize:
        x = x / np.max(np.abs(x))
    return AudioClip(x, sample_rate)


def make_bandpass_noise(band, sample_rate: int, duration: float, seed: int) -> AudioClip:
    """Peak-normalized white noise confined to ``band`` = [f_lo, f_hi] Hz."""
    return make_spectral_noise([band], sample_rate, duration, seed)


def make_tone(freq: float, sample_rate: int, duration: float, amplitude: float = 1.0, phase: float = 0.0) -> AudioClip:
    t = np.arange(int(round(duration * sample_rate))) / sample_rate
    return AudioClip(amplitude * np.sin(2 * np.pi * freq * t + phase), sample_rate)


# ---------------------------------------------------------------------------
# Analysis
# ---------------------------------------------------------------------------


def get_window(kind: str, n: int) -> np.ndarray:
    if kind == "hann":
        # periodic Hann, the usual choice for spectral analysis
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    if kind == "rect":
        return np.ones(n)
    raise ParameterError(f"unknown window {kind!r}; use 'hann' or 'rect'")


def pad_window_input(window_samples: np.ndarray, target_n: int = 2048) -> np.ndarray:
    """Center ``window_samples`` (last axis) inside ``target_n`` zeros.

    Lets a fixed-input model see a shorter analysis window: the DFT of the
    padded frame samples the same spectrum on the model's bin grid.  Longer
    windows cannot be squeezed in and raise :class:`UnsupportedInput`.
    """
    x = np.asarray(window_samples, dtype=np.float64)
    n = x.shape[-1]
    if n > target_n:
        raise UnsupportedInput(f"window of {n} samples exceeds the model's fixed size {target_n}")
    if n == target_n:
        return x.copy()
    left = (target_n - n) // 2
    pad = [(0, 0)] * (x.ndim - 1) + [(left, target_n - n - left)]
    return np.pad(x, pad)


def stft(
    clip: AudioClip,
    n_fft: int,
    hop: Optional[int] = None,
    window: str = "hann",
    pad_to: Optional[int] = None,
) -> MagnitudeSpectrogram:
    """One-sided magnitude STFT with ``floor((len - n_fft) / hop) + 1`` frames.

    ``pad_to`` zero-pads every windowed frame (centered) to a longer DFT,
    which is how the fixed-size baseline consumes shorter windows.
    """
    hop = n_fft if hop is None else hop
    if n_fft < 2 or hop < 1:
        raise ParameterError(f"need n_fft >= 2 and hop >= 1, got {n_fft}, {hop}")
    x = clip.samples
    if len(x) < n_fft:
        raise ParameterError(f"clip of {len(x)} samples is shorter than one {n_fft}-sample window")
    frames = sliding_window_view(x, n_fft)[::hop] * get_window(window, n_fft)
    dft_n = n_fft
    if pad_to is not None:
        frames = pad_window_input(frames, pad_to)
        dft_n = pad_to
    mags = np.abs(np.fft.rfft(frames, n=dft_n, axis=-1))
    starts = np.arange(frames.shape[0]) * hop
    times = (starts + n_fft / 2) / clip.sample_rate
    return MagnitudeSpectrogram(mags, dft_n, hop, clip.sample_rate, times, window_length=n_fft)


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------


def resample(clip: AudioClip, target_sr: int, half_width: int = 32, beta: float = 8.6) -> AudioClip:
    """Kaiser-windowed sinc interpolation to ``target_sr``.

    The low-pass cutoff sits at the smaller of the two Nyquist frequencies;
    the kernel spans ``half_width`` zero crossings of that cutoff on each
    side.  Taps are renormalized per output sample, so DC passes with unit
    gain up to the clip edges.
    """
    if target_sr <= 0 or int(target_sr) != target_sr:
        raise ParameterError(f"target_sr must be a positive integer, got {target_sr}")
    target_sr = int(target_sr)
    sr = clip.sample_rate
    if target_sr == sr:
        return AudioClip(clip.samples.copy(), sr, clip.label)
    x = clip.samples
    ratio = target_sr / sr
    cut = min(1.0, ratio)
    width = half_width / cut  # kernel half-width in input samples
    n_out = int(round(len(x) * ratio))
    reach = int(math.ceil(width))
    offsets = np.arange(-reach + 1, reach + 1)
    out = np.empty(n_out)
    i0_beta = np.i0(beta)
    chunk = max(1, 2_000_000 // offsets.size)
    for start in range(0, n_out, chunk):
        t = np.arange(start, min(n_out, start + chunk)) / ratio
        idx = np.floor(t).astype(np.int64)[:, None] + offsets[None, :]
        u = t[:, None] - idx
        r = np.clip(1.0 - (u / width) ** 2, 0.0, None)
        h = cut * np.sinc(cut * u) * np.i0(beta * np.sqrt(r)) / i0_beta
        h[(idx < 0) | (idx >= len(x)) | (np.abs(u) > width)] = 0.0
        out[start:start + t.size] = (h * x[np.clip(idx, 0, len(x) - 1)]).sum(axis=1) / h.sum(axis=1)
    return AudioClip(out, target_sr, clip.label)


# ---------------------------------------------------------------------------
# Silence trimming
# ---------------------------------------------------------------------------


def trim_silence(clip: AudioClip, threshold_db: float = -60.0, frame_ms: float = 20.0) -> AudioClip:
    """Drop leading and trailing frames whose RMS is below ``peak + threshold_db``.

    Frames are non-overlapping ``frame_ms`` blocks; the interior is kept
    untouched even if it contains quiet stretches.  An entirely silent clip
    raises :class:`EmptyClipError`.
    """
    if threshold_db >= 0:
        raise ParameterError(f"threshold_db must be negative (relative to peak), got {threshold_db}")
    x = clip.samples
    peak = np.max(np.abs(x)) if x.size else 0.0
    if peak == 0.0:
        raise EmptyClipError("clip is entirely silent")
    hop = max(1, int(round(frame_ms * 1e-3 * clip.sample_rate)))
    n_frames = int(math.ceil(len(x) / hop))
    padded = np.zeros(n_frames * hop)
    padded[: len(x)] = x
    rms = np.sqrt((padded.reshape(n_frames, hop) ** 2).mean(axis=1))
    with np.errstate(divide="ignore"):
        level = 20.0 * np.log10(rms / peak)
    loud = np.flatnonzero(level >= threshold_db)
    if loud.size == 0:
        raise EmptyClipError("no frame above the silence threshold")
    start = loud[0] * hop
    stop = min(len(x), (loud[-1] + 1) * hop)
    return AudioClip(x[start:stop].copy(), clip.sample_rate, clip.label)


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------


def read_wav(path, label: Optional[int] = None) -> AudioClip:
    """Read 16-bit PCM or 32-bit float WAV; channels are averaged to mono."""
    sr, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        x = data.astype(np.float64)
    else:
        raise ParameterError(f"unsupported WAV sample type {data.dtype}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    return AudioClip(x, int(sr), label)


def write_wav(path, clip: AudioClip) -> None:
    """Write 32-bit float mono WAV."""
    wavfile.write(str(path), clip.sample_rate, clip.samples.astype(np.float32))

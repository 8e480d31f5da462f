"""Causal STFT analysis/synthesis and multi-frame unfolding.

Frames are taken from a signal left-padded with ``window_len - hop`` zeros,
so frame ``t`` only sees input samples with index ``< (t + 1) * hop``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window


@dataclass(frozen=True)
class StftConfig:
    sample_rate: int = 16000
    window_len: int = 320
    hop: int = 80
    window: str = "hamming"
    fft_size: int = 512

    def __post_init__(self):
        if self.window_len <= 0 or self.hop <= 0:
            raise ValueError("window_len and hop must be positive")
        if self.hop > self.window_len:
            raise ValueError(f"hop ({self.hop}) must not exceed window_len ({self.window_len})")
        if self.fft_size < self.window_len:
            raise ValueError(
                f"fft_size ({self.fft_size}) must be >= window_len ({self.window_len})")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def pad(self) -> int:
        return self.window_len - self.hop

    def analysis_window(self) -> np.ndarray:
        # periodic window (fftbins=True), the usual choice for overlap-add
        return get_window(self.window, self.window_len, fftbins=True)

    def n_frames(self, n_samples: int) -> int:
        return -(-(n_samples + self.pad) // self.hop)


@dataclass
class Spectrogram:
    """Complex T-F matrix, shape ``(frames, bins)``.

    ``length`` is the number of time samples the spectrogram was computed
    from; :func:`istft` trims its output to it.
    """
    data: np.ndarray
    config: StftConfig = StftConfig()
    length: int | None = None

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_bins(self) -> int:
        return self.data.shape[1]

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ValueError(f"spectrogram data must be 2-D, got shape {self.data.shape}")


@dataclass
class UnfoldedFarEnd:
    """Causal tap stack: ``data[f, t, k] = X[t - k, f]`` (zero before frame 0)."""
    data: np.ndarray

    @property
    def m(self) -> int:
        return self.data.shape[2]


def _frame(x: np.ndarray, config: StftConfig) -> np.ndarray:
    T = config.n_frames(len(x))
    total = (T - 1) * config.hop + config.window_len
    padded = np.zeros(total)
    padded[config.pad:config.pad + len(x)] = x
    idx = np.arange(config.window_len)[None, :] + config.hop * np.arange(T)[:, None]
    return padded[idx]


def stft(signal, config: StftConfig | None = None) -> Spectrogram:
    """One-sided STFT of a real signal with the e^{-j w n} sign convention."""
    config = config or StftConfig()
    x = np.asarray(signal, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("stft expects a non-empty 1-D real signal")
    frames = _frame(x, config) * config.analysis_window()
    data = np.fft.rfft(frames, n=config.fft_size, axis=-1)
    return Spectrogram(data, config, len(x))


def istft(spec: Spectrogram, length: int | None = None) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`.

    The overlap-added output is divided by the summed squared window, which
    makes ``istft(stft(x))`` reproduce ``x`` for any hop <= window length.
    """
    config = spec.config
    if spec.n_bins != config.n_bins:
        raise ValueError(
            f"spectrogram has {spec.n_bins} bins but config implies {config.n_bins}")
    length = length if length is not None else spec.length
    T = spec.n_frames
    win = config.analysis_window()
    frames = np.fft.irfft(spec.data, n=config.fft_size, axis=-1)[:, :config.window_len]
    total = (T - 1) * config.hop + config.window_len
    out = np.zeros(total)
    wsum = np.zeros(total)
    for t in range(T):
        sl = slice(t * config.hop, t * config.hop + config.window_len)
        out[sl] += frames[t] * win
        wsum[sl] += win ** 2
    nz = wsum > 1e-10
    out[nz] /= wsum[nz]
    out = out[config.pad:]
    if length is None:
        length = len(out)
    if length > len(out):
        out = np.pad(out, (0, length - len(out)))
    return out[:length]


def window_power_gain(config: StftConfig) -> float:
    """Constant ``g`` with ``spectral_energy(stft(x)) == g * sum(x**2)``.

    Holds exactly whenever the squared window overlap-adds to a constant,
    which is the case for the default 20 ms / 5 ms hamming setup.
    """
    w = config.analysis_window()
    return config.fft_size * float(np.sum(w ** 2)) / config.hop


def spectral_energy(spec: Spectrogram) -> float:
    """Two-sided spectral energy recovered from one-sided bins."""
    weights = np.full(spec.n_bins, 2.0)
    weights[0] = 1.0
    if spec.config.fft_size % 2 == 0:
        weights[-1] = 1.0
    return float(np.sum(weights * np.abs(spec.data) ** 2))


def unfold(spec: Spectrogram | np.ndarray, m: int) -> UnfoldedFarEnd:
    """Stack the current and ``m - 1`` previous frames per bin."""
    if m < 1:
        raise ValueError(f"m must be a positive integer, got {m}")
    X = spec.data if isinstance(spec, Spectrogram) else np.asarray(spec)
    T, F = X.shape
    out = np.zeros((F, T, m), dtype=np.result_type(X.dtype, np.complex128))
    Xt = X.T
    for k in range(min(m, T)):
        out[:, k:, k] = Xt[:, :T - k]
    return UnfoldedFarEnd(out)

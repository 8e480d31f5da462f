import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wiener_aec.stft import (Spectrogram, StftConfig, istft, spectral_energy, stft, unfold,
                             window_power_gain)

CFG = StftConfig()


def relative_rms(a, b):
    return np.sqrt(np.mean((a - b) ** 2) / np.mean(b ** 2))


def test_default_config():
    assert (CFG.sample_rate, CFG.window_len, CFG.hop, CFG.window) == (16000, 320, 80, "hamming")
    assert CFG.fft_size == 512 and CFG.n_bins == 257


def test_config_errors():
    with pytest.raises(ValueError):
        StftConfig(fft_size=256)
    with pytest.raises(ValueError):
        StftConfig(hop=400)
    with pytest.raises(ValueError):
        stft(np.array([]))


def test_zero_signal_shape():
    spec = stft(np.zeros(16000))
    T = int(np.ceil((16000 + 320 - 80) / 80))
    assert spec.data.shape == (T, 257)
    assert not np.any(spec.data)


def test_impulse_frame_matches_direct_dft():
    x = np.zeros(1000)
    x[0] = 1.0
    spec = stft(x)
    # sample 0 sits at offset window_len - hop inside frame 0
    frame = np.zeros(CFG.fft_size)
    frame[CFG.pad] = CFG.analysis_window()[CFG.pad]
    n = np.arange(CFG.fft_size)
    k = np.arange(CFG.n_bins)[:, None]
    oracle = np.sum(frame * np.exp(-2j * np.pi * k * n / CFG.fft_size), axis=1)
    np.testing.assert_allclose(spec.data[0], oracle, atol=1e-12)


def test_sine_peak_bin():
    t = np.arange(16000) / 16000
    spec = stft(np.sin(2 * np.pi * 1000 * t))
    expected = round(1000 * CFG.fft_size / 16000)
    full = slice(4, spec.n_frames - 4)
    assert np.all(np.argmax(np.abs(spec.data[full]), axis=1) == expected)


def test_roundtrip_white_noise():
    x = np.random.default_rng(0).standard_normal(16000)
    y = istft(stft(x))
    interior = slice(CFG.window_len, -CFG.window_len)
    assert relative_rms(y[interior], x[interior]) <= 1e-6
    assert len(y) == len(x)


def test_istft_of_zero_is_zero():
    spec = Spectrogram(np.zeros((10, 257), dtype=complex), CFG, 400)
    assert not np.any(istft(spec))


def test_single_frame_synthesis():
    # one frame: overlap-add has nothing to overlap, so synthesis is the
    # inverse DFT times the window divided by the squared window
    cfg = StftConfig(window_len=320, hop=320, fft_size=512)
    w = cfg.analysis_window()
    seg = np.sin(2 * np.pi * 440 * np.arange(320) / 16000)
    spec = Spectrogram(np.fft.rfft(seg * w, 512)[None, :], cfg)
    y = istft(spec)
    keep = w > 1e-3
    np.testing.assert_allclose(y[keep], seg[keep], atol=1e-10)


def test_istft_rejects_wrong_bin_count():
    with pytest.raises(ValueError):
        istft(Spectrogram(np.zeros((3, 100), dtype=complex), CFG))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, 2000))
    lhs = stft(a * x + b * y).data
    rhs = a * stft(x).data + b * stft(y).data
    scale = max(np.max(np.abs(rhs)), 1e-12)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * scale + 1e-12


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(8000, 20000))
def test_roundtrip_property(seed, n):
    x = np.random.default_rng(seed).standard_normal(n)
    y = istft(stft(x))
    interior = slice(CFG.window_len, -CFG.window_len)
    assert relative_rms(y[interior], x[interior]) <= 1e-6


def test_parseval_constant():
    x = np.random.default_rng(3).standard_normal(12345)
    ratio = spectral_energy(stft(x)) / np.sum(x ** 2)
    assert ratio == pytest.approx(window_power_gain(CFG), rel=1e-10)


def test_unfold_identity_for_one_tap():
    X = np.random.default_rng(1).standard_normal((7, 5)) + 0j
    u = unfold(X, 1)
    assert u.data.shape == (5, 7, 1)
    np.testing.assert_array_equal(u.data[:, :, 0], X.T)


def test_unfold_zero_history():
    X = np.array([[1.0], [2.0]]) + 0j
    u = unfold(X, 3).data[0]
    np.testing.assert_array_equal(u, [[1, 0, 0], [2, 1, 0]])


def test_unfold_default_shape():
    u = unfold(np.ones((100, 257), dtype=complex), 20)
    assert u.data.shape == (257, 100, 20)


def test_unfold_rejects_zero_taps():
    with pytest.raises(ValueError):
        unfold(np.ones((3, 3)), 0)


def test_unfold_causality():
    rng = np.random.default_rng(5)
    x = rng.standard_normal(4000)
    t = 20
    y = x.copy()
    y[(t + 1) * CFG.hop:] = rng.standard_normal(len(x) - (t + 1) * CFG.hop)
    a = unfold(stft(x), 6).data
    b = unfold(stft(y), 6).data
    np.testing.assert_array_equal(a[:, :t + 1], b[:, :t + 1])
    assert not np.array_equal(a[:, t + 1], b[:, t + 1])

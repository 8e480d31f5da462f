"""
STFT analysis and resynthesis
=============================

The canceller works on a 20 ms hamming window with a 5 ms hop at 16 kHz.
This script checks that analysis followed by weighted overlap-add gives
back the input, and shows how the far-end spectrum is unfolded into tap
vectors.
"""

import numpy as np

from wiener_aec.simulate import speech_like
from wiener_aec.stft import StftConfig, istft, spectral_energy, stft, unfold, window_power_gain

cfg = StftConfig()
print(f"window {cfg.window_len} samples, hop {cfg.hop}, {cfg.n_bins} bins")

# two seconds of a speech-like test signal
x = speech_like(2.0, seed=0)
X = stft(x, cfg)
print("spectrogram shape (frames, bins):", X.data.shape)

# resynthesis: the error is at machine precision away from the edges
y = istft(X)
interior = slice(cfg.window_len, -cfg.window_len)
err = np.sqrt(np.mean((y[interior] - x[interior]) ** 2) / np.mean(x[interior] ** 2))
print(f"relative RMS round-trip error: {err:.2e}")

# energy is preserved up to a constant set by the window and the hop
print(f"spectral / time energy: {spectral_energy(X) / np.sum(x ** 2):.4f}"
      f"  (expected {window_power_gain(cfg):.4f})")

# unfolding stacks the current frame and the 19 before it, per bin
taps = unfold(X, 20)
f, t = 40, 200
print("tap vector at bin 40, frame 200 starts with frames", t, t - 1, "...")
assert taps.data[f, t, 0] == X.data[t, f] and taps.data[f, t, 1] == X.data[t - 1, f]

"""
Cancelling a simulated echo with the short-time Wiener filter
=============================================================

A room response from the image method turns the loudspeaker signal into
an echo. With only the far-end talker active the filter should remove most
of it; with both talkers active the near-end speech leaks into the
statistics and the cancellation gets worse.
"""

import numpy as np

from wiener_aec.metrics import erle, sdr
from wiener_aec.simulate import Scenario, image_method_rir, render_scenario, speech_like
from wiener_aec.stft import istft
from wiener_aec.wiener import stws_pipeline

scenario = Scenario(room=(5.0, 4.0, 3.0), mic_pos=(2.0, 2.0, 1.5), src_pos=(2.4, 2.0, 1.5),
                    t60=0.2, ser_db=0.0)
rir = image_method_rir(scenario)
print(f"RIR: {len(rir.taps)} taps, direct path at sample {np.argmax(np.abs(rir.taps))}")

far = speech_like(3.0, seed=1)
near = speech_like(3.0, seed=2)

# %%
# Far-end single talk
# -------------------
single = render_scenario(scenario, far, np.zeros_like(far), rir=rir)
out, filt = stws_pipeline(single.far, single.mic, m=20, L=100)
print(f"single talk ERLE: {erle(single.mic, istft(out, len(far))):.1f} dB")

# %%
# Double talk at 0 dB SER
# -----------------------
double = render_scenario(scenario, far, near, rir=rir)
out, _ = stws_pipeline(double.far, double.mic, m=20, L=100)
print(f"double talk SDR: mixture {sdr(near, double.mic):.2f} dB, "
      f"after cancellation {sdr(near, istft(out, len(far))):.2f} dB")

# a shorter estimation window adapts faster but averages less
for L in (25, 50, 100, 200):
    out, _ = stws_pipeline(double.far, double.mic, m=20, L=L)
    print(f"  L = {L:3d} frames: SDR {sdr(near, istft(out, len(far))):.2f} dB")

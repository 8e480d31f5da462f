"""
Training the attention weights
==============================

The attention module reweights the instantaneous statistics frame by frame
before they are summed. Here it is trained on a handful of simulated
double-talk clips, where the clean echo is known, and then compared with
the plain filter on clips it has not seen.

Takes about two minutes.
"""

import numpy as np

from wiener_aec.ablation import run_ablation, train_default
from wiener_aec.attention import AttentionParams, save_checkpoint

result = train_default(m=8, steps=60)
print("loss every 10 steps:", np.round(result.losses[::10], 3))
save_checkpoint(result.params, "attention_m8.npz")

# The gates start at zero. Only the product sigmoid(q) * sigmoid(k) enters
# the attention scores, so two gates that start equal receive equal
# gradients and move together.
sq = 1 / (1 + np.exp(-result.params.q_gate))
sk = 1 / (1 + np.exp(-result.params.k_gate))
print("sigmoid(q) * sigmoid(k):", np.round(sq * sk, 2))

# %%
# Held-out comparison
# -------------------
# Ten clips is a small sample and the margin varies from clip to clip;
# the acceptance suite uses fifty and a paired sign test.
for name, params in (("untrained", AttentionParams.init(8)), ("trained", result.params)):
    res = run_ablation(params, n_scenarios=10)
    mix, plain, enhanced = res.means()
    print(f"{name:9s}: mixture {mix:5.2f}  plain {plain:5.2f}  attention {enhanced:5.2f} dB SDR"
          f"  (wins {int(np.sum(res.astws > res.stws))}/10)")

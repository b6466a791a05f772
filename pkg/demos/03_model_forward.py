# # The decoder stack: latent attention, attractors, depth pooling
#
# One forward pass at the reference geometry (5 conformer blocks of width
# 256, latent attention width 128 with 16 latents, 8 attractor slots of 256),
# plus the audit that the sequence attention really is linear in T.

import time

import numpy as np

import diarnet.autodiff as ad
from diarnet import ModelConfig, forward, init_model_params, param_count, tensor
from diarnet.model import latte_attention

cfg = ModelConfig()
print("config:", cfg)
params = init_model_params(cfg, np.random.default_rng(0))
print(f"parameters: {param_count(params) / 1e6:.1f}M")

# ## Forward on a 50 s sequence (T = 500 frames at the 100 ms rate)

x0 = tensor(np.random.default_rng(1).standard_normal((500, 256)).astype(np.float32))
t0 = time.perf_counter()
with ad.no_grad():
    res = forward(x0, params, cfg)
print(f"forward in {time.perf_counter() - t0:.2f}s")
print("logits:", res.logits.shape, "| frames:", res.frames.shape,
      "| attractor directions:", res.attractor_dirs.shape)

# Per-layer flow: pooled depth stack is added back as a global residual,
# the attractors are refined against the block input, and the block
# cross-attends to the refined attractors. The final attractors split into
# a direction and a bias per slot:
#
#     logit[t, s] = frames[t] . dir[s] + bias[s] + global_bias

probs = 1.0 / (1.0 + np.exp(-res.logits.data))
print("speaker posteriors: min %.3f max %.3f" % (probs.min(), probs.max()))

# ## Linear-cost attention audit
#
# Attention over time is routed through 16 learned latents: latents attend
# over the sequence, then positions attend over the updated latents. No
# T x T score matrix exists, so doubling T doubles the work.

macs = {}
for t in (500, 1000):
    xt = tensor(np.random.default_rng(2).standard_normal((t, 256)).astype(np.float32))
    with ad.no_grad(), ad.audit() as rec:
        latte_attention(xt, params, "block1.latte", cfg)
    macs[t] = rec["macs"]
    assert not any(sum(1 for d in s if d == t) >= 2 for s in rec["shapes"])
print(f"latent-attention MACs: T=500 -> {macs[500]:,}, T=1000 -> {macs[1000]:,}, "
      f"ratio {macs[1000] / macs[500]:.4f}")

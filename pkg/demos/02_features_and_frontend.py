# # Front-end: from a waveform to 256-dim frame embeddings
#
# The feature chain: 8 kHz mono audio -> 23-bin log-mel at a 10 ms hop ->
# overlapping 15-frame windows (hop 10, so one window per 100 ms) -> a
# 5-layer CNN that collapses each 15x23 window to one embedding vector.

import numpy as np

from diarnet import (
    MixtureSpec,
    cnn_encode,
    frame_count,
    load_wav,
    log_mel,
    synth_mixture,
    window_stack,
    write_wav,
)
from diarnet.frontend import init_frontend_params

# ## A synthetic two-speaker mixture as input

rec = synth_mixture(MixtureSpec(n_speakers=2, duration_s=12.0, overlap_ratio=0.2,
                                noise_snr_db=15.0, seed=4))
print(f"recording: {rec.clip.duration_s:.1f}s, {rec.labels.n_frames} label frames")

# WAV round-trip is part of the deal (PCM16 write, parse, resample on read).
write_wav("/tmp/demo_mix.wav", rec.clip)
clip = load_wav("/tmp/demo_mix.wav")
print("samples:", len(clip.samples))

# ## Log-mel frames
mel = log_mel(clip)
print("mel frames:", mel.frames.shape, "(10 ms hop, 25 ms window, 23 bins)")

# ## Windows: 15 frames, hop 10, 5-frame overlap; 15*23 = 345 values each
wt = window_stack(mel)
print("windows:", wt.windows.shape)
print("window count matches the label grid:", wt.n_windows == frame_count(len(clip.samples)))
assert np.array_equal(wt.windows[1][:5], wt.windows[0][10:])

# ## CNN encoder: (T, 15, 23) -> (T, 256), RMS-normalized
#
# Four stride-2 same-padded 3x3 layers shrink 15x23 to 1x2; a final valid
# 1x2 kernel collapses that to a single 256-channel vector per window:
# 15x23 -> 8x12 -> 4x6 -> 2x3 -> 1x2 -> 1x1.

params = init_frontend_params(256, np.random.default_rng(0))
emb = cnn_encode(wt, params, 256)
print("embeddings:", emb.shape)
rms = np.sqrt((emb.data ** 2).mean(axis=1))
print("per-frame RMS after the norm (gain=1 init): %.3f .. %.3f" % (rms.min(), rms.max()))

"""Framing, overlap-add and the two masking paths, on a toy signal.

Run: python3 demos/01_frames_and_masks.py
"""
import numpy as np

from dtln.models import build_model
from dtln.transforms import (
    BasisPair,
    analysis_basis,
    apply_feature_mask,
    apply_spectral_mask,
    frame_signal,
    mag_phase,
    n_frames,
    overlap_add,
    rfft,
    synthesis_basis,
)

rng = np.random.default_rng(0)
t = np.arange(16000) / 16000
x = 0.3 * np.sin(2 * np.pi * 440 * t) + 0.05 * rng.standard_normal(len(t))

# 32 ms frames every 8 ms: 4x overlap, no window
frames = frame_signal(x)
print("1 s of audio ->", frames.shape, "frames; formula gives", n_frames(len(x)))

# rectangular frames summed at 4x overlap and scaled by hop/L give the input back
y = overlap_add(frames)
inner = slice(384, len(y) - 384)
print("OLA interior error:", np.max(np.abs(y[inner] - x[inner])))

# first core: a mask on the STFT magnitude, noisy phase reused
spec = rfft(frames)
mp = mag_phase(spec)
mask = np.zeros(mp.magnitude.shape)
bins = np.fft.rfftfreq(512, 1 / 16000)
mask[:, np.abs(bins - 440) < 40] = 1.0  # keep the tone, drop everything else
tone = overlap_add(apply_spectral_mask(mp, mask))
err = tone[inner] - 0.3 * np.sin(2 * np.pi * 440 * t[inner])
print("band-pass mask: residual noise power %.2e (input %.2e)" % (np.mean(err**2), 0.05**2))

# second core: a learned basis. Here just the untrained Glorot matrices of a fresh model.
params = build_model("DTLN", seed=0)
basis = params.basis(1)
feats = analysis_basis(frames, basis)
out = synthesis_basis(apply_feature_mask(feats, np.ones_like(feats)), basis)
print("learned features:", feats.shape, "-> frames", out.shape)

# with an orthonormal basis the all-ones mask is an identity
q, _ = np.linalg.qr(rng.standard_normal((512, 512)))
ortho = BasisPair(q.T, q.T)
back = synthesis_basis(apply_feature_mask(analysis_basis(frames, ortho), np.ones((len(frames), 512))), ortho)
print("orthonormal basis round trip:", np.max(np.abs(back - frames)))

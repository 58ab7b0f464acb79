"""Short-time objective intelligibility (Taal et al., 2011).

Both signals are resampled to 10 kHz, silent frames (40 dB below the loudest
frame of the reference) are dropped from both, and 1/3-octave band envelopes
of 384 ms segments are compared by clipped, normalized correlation.
"""
from __future__ import annotations

import numpy as np
from scipy.signal import resample_poly

FS = 10000
FRAME = 256
NFFT = 512
N_BANDS = 15
MIN_FREQ = 150.0
SEGMENT = 30  # frames, 384 ms
BETA_DB = -15.0
DYN_RANGE_DB = 40.0
_EPS = np.finfo(np.float64).eps


def third_octave_matrix(fs: int = FS, nfft: int = NFFT, n_bands: int = N_BANDS, min_freq: float = MIN_FREQ) -> np.ndarray:
    """Binary ``(n_bands, nfft//2 + 1)`` matrix grouping FFT bins into 1/3-octave bands."""
    freqs = np.linspace(0, fs, nfft + 1)[: nfft // 2 + 1]
    k = np.arange(n_bands)
    lo = min_freq * 2.0 ** ((2 * k - 1) / 6)
    hi = min_freq * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((n_bands, len(freqs)))
    for band in range(n_bands):
        lo_bin = np.argmin((freqs - lo[band]) ** 2)
        hi_bin = np.argmin((freqs - hi[band]) ** 2)
        obm[band, lo_bin:hi_bin] = 1.0
    return obm


def _window() -> np.ndarray:
    # Hann without the zero end points.
    return np.hanning(FRAME + 2)[1:-1]


def _frames(x: np.ndarray, hop: int, include_last: bool) -> np.ndarray:
    stop = len(x) - FRAME + (1 if include_last else 0)
    starts = np.arange(0, max(stop, 0), hop)
    if len(starts) == 0:
        return np.zeros((0, FRAME))
    return x[starts[:, None] + np.arange(FRAME)] * _window()


def _ola(frames: np.ndarray, hop: int) -> np.ndarray:
    n = len(frames)
    out = np.zeros((n - 1) * hop + FRAME) if n else np.zeros(0)
    for i, f in enumerate(frames):
        out[i * hop : i * hop + FRAME] += f
    return out


def remove_silent_frames(x: np.ndarray, y: np.ndarray, dyn_range: float = DYN_RANGE_DB):
    """Drop frames where the reference ``x`` is more than ``dyn_range`` dB below its peak frame."""
    hop = FRAME // 2
    xf = _frames(x, hop, include_last=True)
    yf = _frames(y, hop, include_last=True)
    energy = 20 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    keep = energy > np.max(energy) - dyn_range
    return _ola(xf[keep], hop), _ola(yf[keep], hop)


def _band_envelopes(x: np.ndarray, obm: np.ndarray) -> np.ndarray:
    spec = np.fft.rfft(_frames(x, FRAME // 2, include_last=False), n=NFFT, axis=1)
    return np.sqrt(obm @ (np.abs(spec) ** 2).T)  # (bands, frames)


def stoi(estimate, reference, sample_rate: int = 16000) -> float:
    """Intelligibility of ``estimate`` relative to clean ``reference``; typically in [0, 1]."""
    y = np.asarray(getattr(estimate, "samples", estimate), dtype=np.float64)
    x = np.asarray(getattr(reference, "samples", reference), dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"estimate and reference lengths differ: {y.shape} vs {x.shape}")
    if len(x) < sample_rate:
        raise ValueError("STOI needs at least 1 s of audio")
    if sample_rate != FS:
        g = np.gcd(int(sample_rate), FS)
        x = resample_poly(x, FS // g, sample_rate // g)
        y = resample_poly(y, FS // g, sample_rate // g)
    x, y = remove_silent_frames(x, y)
    obm = third_octave_matrix()
    x_env = _band_envelopes(x, obm)
    y_env = _band_envelopes(y, obm)
    n_frames = x_env.shape[1]
    if n_frames < SEGMENT:
        raise ValueError("not enough non-silent speech for a STOI segment (need 384 ms)")

    idx = np.arange(SEGMENT, n_frames + 1)[:, None] + np.arange(-SEGMENT, 0)
    xs = np.transpose(x_env[:, idx], (1, 0, 2))  # (segments, bands, frames)
    ys = np.transpose(y_env[:, idx], (1, 0, 2))
    scale = np.linalg.norm(xs, axis=2, keepdims=True) / (np.linalg.norm(ys, axis=2, keepdims=True) + _EPS)
    clip = 10 ** (-BETA_DB / 20)
    yp = np.minimum(ys * scale, xs * (1 + clip))
    yp = yp - yp.mean(axis=2, keepdims=True)
    xs = xs - xs.mean(axis=2, keepdims=True)
    yp /= np.linalg.norm(yp, axis=2, keepdims=True) + _EPS
    xs /= np.linalg.norm(xs, axis=2, keepdims=True) + _EPS
    return float(np.sum(yp * xs) / (xs.shape[0] * xs.shape[1]))

"""Synthetic speech-like and noise corpora for desk-scale experiments.

The "speech" is a source-filter toy: a band-limited glottal pulse train with
a gliding pitch contour, shaped by three formant resonators per syllable,
with fricative bursts and pauses between words. It is not speech, but it has
the harmonic structure, onsets and silences that a mask estimator needs to
learn from.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.signal import butter, lfilter, sosfilt

from .transforms import SAMPLE_RATE

FS = SAMPLE_RATE

# (F1, F2, F3) in Hz for a handful of vowels
_VOWELS = np.array(
    [
        [730, 1090, 2440],
        [270, 2290, 3010],
        [300, 870, 2240],
        [530, 1840, 2480],
        [570, 840, 2410],
        [660, 1720, 2410],
        [440, 1020, 2240],
        [390, 1990, 2550],
    ],
    dtype=float,
)
_BANDWIDTHS = np.array([90.0, 110.0, 170.0])
_FORMANT_GAINS = (1.0, 0.7, 0.5)
# harmonic amplitudes fall as k**-0.5; with the formant gains and fricative
# level this puts the long-term spectrum within a few dB of typical speech
# (about -3 dB at 0.5-1 kHz, -13 dB at 1-3 kHz, -20 dB at 3-6 kHz re the 0-500 Hz band)
_SOURCE_TILT = 0.5


def _resonator(x: np.ndarray, freq: float, bw: float) -> np.ndarray:
    """Two-pole resonator with unit gain at ``freq``."""
    r = np.exp(-np.pi * bw / FS)
    theta = 2 * np.pi * freq / FS
    a = [1.0, -2 * r * np.cos(theta), r * r]
    peak = abs(a[0] + a[1] * np.exp(-1j * theta) + a[2] * np.exp(-2j * theta))
    return lfilter([peak], a, x)


def _syllable(n: int, f0: float, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / FS
    glide = 1.0 + rng.uniform(-0.15, 0.15) * t / max(t[-1], 1e-3) + 0.02 * np.sin(2 * np.pi * rng.uniform(4, 7) * t)
    phase = 2 * np.pi * np.cumsum(f0 * glide) / FS
    n_harm = int(7000 // (f0 * 1.2))
    k = np.arange(1, n_harm + 1)
    source = np.sin(np.outer(phase, k)) @ (k**-_SOURCE_TILT)
    formants = _VOWELS[rng.integers(len(_VOWELS))] * rng.uniform(0.9, 1.15)
    voiced = sum(_resonator(source, f, b) * g for f, b, g in zip(formants, _BANDWIDTHS, _FORMANT_GAINS))
    attack = min(int(0.02 * FS), n // 4)
    env = np.ones(n)
    env[:attack] = np.sin(np.linspace(0, np.pi / 2, attack)) ** 2
    env[n - attack :] = np.cos(np.linspace(0, np.pi / 2, attack)) ** 2
    return voiced * env * rng.uniform(0.5, 1.0)


def _fricative(n: int, rng: np.random.Generator) -> np.ndarray:
    lo = rng.uniform(2000, 4500)
    sos = butter(4, [lo, min(lo * 1.8, 7600)], btype="band", fs=FS, output="sos")
    env = np.hanning(n)
    return sosfilt(sos, rng.standard_normal(n)) * env * rng.uniform(0.15, 0.6)


def synth_speech(seconds: float, rng) -> np.ndarray:
    """Speech-like signal of ``seconds`` duration, RMS normalized to about 0.05-0.1."""
    rng = np.random.default_rng(rng)
    total = int(seconds * FS)
    out = np.zeros(total)
    f0 = rng.uniform(90, 230)
    pos = int(rng.uniform(0.0, 0.3) * FS)
    while pos < total:
        for _ in range(rng.integers(1, 4)):
            if rng.random() < 0.35:
                n = int(rng.uniform(0.04, 0.12) * FS)
                seg = _fricative(n, rng)
            else:
                n = int(rng.uniform(0.1, 0.3) * FS)
                seg = _syllable(n, f0 * rng.uniform(0.9, 1.1), rng)
            end = min(pos + n, total)
            out[pos:end] += seg[: end - pos]
            pos = end
        pos += int(rng.uniform(0.05, 0.4) * FS)
    rms = np.sqrt(np.mean(out**2)) + 1e-12
    return out * (rng.uniform(0.05, 0.1) / rms)


def _colored(n: int, exponent: float, rng: np.random.Generator) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(len(spec), dtype=float)
    f[0] = 1.0
    return np.fft.irfft(spec / f ** (exponent / 2), n)


NOISE_KINDS = ("white", "pink", "brown", "babble", "hum", "modulated")


def synth_noise(seconds: float, rng, kind: str = None) -> np.ndarray:
    """One of several stationary and non-stationary noise types, RMS 0.05."""
    rng = np.random.default_rng(rng)
    kind = kind or NOISE_KINDS[rng.integers(len(NOISE_KINDS))]
    n = int(seconds * FS)
    if kind == "white":
        x = rng.standard_normal(n)
    elif kind == "pink":
        x = _colored(n, 1.0, rng)
    elif kind == "brown":
        x = _colored(n, 2.0, rng)
    elif kind == "babble":
        x = sum(synth_speech(seconds, rng) for _ in range(5))
    elif kind == "hum":
        t = np.arange(n) / FS
        base = rng.choice([50.0, 60.0])
        x = sum(np.sin(2 * np.pi * base * k * t + rng.uniform(0, 2 * np.pi)) / k for k in range(1, 12))
        x = x + 0.3 * _colored(n, 1.0, rng) / np.std(_colored(n, 1.0, rng))
    elif kind == "modulated":
        t = np.arange(n) / FS
        lo = rng.uniform(200, 2000)
        sos = butter(2, [lo, lo * 3], btype="band", fs=FS, output="sos")
        x = sosfilt(sos, rng.standard_normal(n)) * (1.2 + np.sin(2 * np.pi * rng.uniform(0.3, 3) * t))
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    return x * (0.05 / (np.sqrt(np.mean(x**2)) + 1e-12))


def write_synthetic_corpus(speech_dir, noise_dir, n_speech: int = 20, n_noise: int = 12, seconds: float = 20.0, seed: int = 0):
    """Write PCM16 source corpora usable by :func:`dtln.data.build_dataset`."""
    from .data import write_wav

    speech_dir, noise_dir = Path(speech_dir), Path(noise_dir)
    speech_dir.mkdir(parents=True, exist_ok=True)
    noise_dir.mkdir(parents=True, exist_ok=True)
    for i in range(n_speech):
        write_wav(speech_dir / f"speech_{i:03d}.wav", synth_speech(seconds, [seed, 1, i]))
    for i in range(n_noise):
        kind = NOISE_KINDS[i % len(NOISE_KINDS)]
        write_wav(noise_dir / f"noise_{i:03d}_{kind}.wav", synth_noise(seconds, [seed, 2, i], kind))

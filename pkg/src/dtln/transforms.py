"""Framing, Fourier and learned-basis transforms, masking and overlap-add.

All functions operate on the trailing axis so they accept a single frame
``(L,)`` as well as stacks of frames ``(..., L)``. Frames are raw sample
blocks (rectangular window); overlap-add rescales by ``hop / L`` so that
75 % overlap reconstructs the input exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

SAMPLE_RATE = 16000
FRAME_LEN = 512
HOP = 128
N_BINS = FRAME_LEN // 2 + 1
FEATURE_SIZE = 256


@dataclass
class AudioBuffer:
    """Mono PCM signal at 16 kHz."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1:
            raise ValueError("audio must be mono (1-D)")
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio contains NaN or Inf")

    def __len__(self):
        return len(self.samples)


class MagPhase(NamedTuple):
    magnitude: np.ndarray
    phase: np.ndarray


@dataclass
class BasisPair:
    """Learned analysis (U) and synthesis (V) banks, both ``N x L``."""

    analysis: np.ndarray
    synthesis: np.ndarray

    def __post_init__(self):
        self.analysis = np.asarray(self.analysis)
        self.synthesis = np.asarray(self.synthesis)
        if self.analysis.ndim != 2 or self.analysis.shape != self.synthesis.shape:
            raise ValueError(
                f"basis shapes must both be N x L, got {self.analysis.shape} and {self.synthesis.shape}"
            )
        if not (np.all(np.isfinite(self.analysis)) and np.all(np.isfinite(self.synthesis))):
            raise ValueError("basis contains non-finite values")


ArrayOrAudio = Union[np.ndarray, AudioBuffer]


def _samples(audio: ArrayOrAudio) -> np.ndarray:
    if isinstance(audio, AudioBuffer):
        return audio.samples
    return np.asarray(audio)


def n_frames(n_samples: int, frame_len: int = FRAME_LEN, hop: int = HOP) -> int:
    if n_samples < frame_len:
        return 0
    return (n_samples - frame_len) // hop + 1


def frame_signal(audio: ArrayOrAudio, frame_len: int = FRAME_LEN, hop: int = HOP) -> np.ndarray:
    """Split a signal into overlapping frames, shape ``(..., K, frame_len)``.

    Frame ``k`` covers samples ``[k*hop, k*hop + frame_len)``; an incomplete
    trailing frame is dropped. Leading axes (a batch) are preserved. The
    result is a copy, not a strided view.
    """
    x = _samples(audio)
    if x.shape[-1] < frame_len:
        raise ValueError("input shorter than one frame")
    view = np.lib.stride_tricks.sliding_window_view(x, frame_len, axis=-1)
    return view[..., ::hop, :].copy()


def overlap_add(frames: np.ndarray, hop: int = HOP) -> np.ndarray:
    """Overlap-add ``(..., K, L)`` frames into ``(..., (K-1)*hop + L)`` samples.

    Output is scaled by ``hop / L`` which undoes the ``L / hop``-fold overlap
    of rectangular frames.
    """
    frames = np.asarray(frames)
    if frames.ndim < 2 or frames.shape[-2] == 0:
        raise ValueError("overlap_add needs at least one frame")
    k, frame_len = frames.shape[-2:]
    if frame_len % hop:
        raise ValueError(f"hop {hop} must divide frame length {frame_len}")
    lead = frames.shape[:-2]
    out = np.zeros(lead + ((k - 1) * hop + frame_len,), dtype=frames.dtype)
    # Sum block-wise: each frame is frame_len // hop hop-sized blocks.
    blocks = frames.reshape(lead + (k, frame_len // hop, hop))
    for j in range(frame_len // hop):
        out[..., j * hop : j * hop + k * hop] += blocks[..., :, j, :].reshape(lead + (k * hop,))
    out *= hop / frame_len
    return out


def overlap_add_backward(grad_out: np.ndarray, frame_len: int = FRAME_LEN, hop: int = HOP) -> np.ndarray:
    """Gradient of :func:`overlap_add` w.r.t. its frames."""
    return frame_signal(grad_out, frame_len, hop) * (hop / frame_len)


def rfft(frame: np.ndarray) -> np.ndarray:
    """Spectrum of real frames: ``L/2 + 1`` complex bins on the last axis."""
    return np.fft.rfft(frame, axis=-1)


def irfft(spectrum: np.ndarray, frame_len: int = FRAME_LEN) -> np.ndarray:
    """Inverse of :func:`rfft`. Imaginary parts of DC and Nyquist are ignored."""
    return np.fft.irfft(spectrum, n=frame_len, axis=-1)


def _bin_weights(n_bins: int) -> np.ndarray:
    w = np.full(n_bins, 0.5)
    w[0] = w[-1] = 1.0
    return w


def rfft_backward(grad_spec: np.ndarray, frame_len: int = FRAME_LEN) -> np.ndarray:
    """Pull a spectrum gradient back to the time frame.

    ``grad_spec`` packs ``dL/dRe + 1j * dL/dIm`` per bin.
    """
    return frame_len * irfft(grad_spec * _bin_weights(grad_spec.shape[-1]), frame_len)


def irfft_backward(grad_frame: np.ndarray) -> np.ndarray:
    """Pull a time-frame gradient back to the spectrum (``dRe + 1j*dIm``)."""
    frame_len = grad_frame.shape[-1]
    return rfft(grad_frame) / (_bin_weights(frame_len // 2 + 1) * frame_len)


def mag_phase(spectrum: np.ndarray) -> MagPhase:
    # np.angle(0) is already 0, matching the arg(0) := 0 convention.
    return MagPhase(np.abs(spectrum), np.angle(spectrum))


def _check_mask(mask: np.ndarray) -> None:
    if np.any(~np.isfinite(mask)) or np.any(mask < 0.0) or np.any(mask > 1.0):
        raise ValueError("mask values must lie in [0, 1]")


def apply_spectral_mask(mp: MagPhase, mask: np.ndarray, frame_len: int = FRAME_LEN) -> np.ndarray:
    """Scale the noisy magnitude by ``mask``, keep the noisy phase, return time frames."""
    mask = np.asarray(mask)
    _check_mask(mask)
    if mask.shape[-1] != mp.magnitude.shape[-1]:
        raise ValueError(f"mask has {mask.shape[-1]} bins, spectrum has {mp.magnitude.shape[-1]}")
    return irfft(mask * mp.magnitude * np.exp(1j * mp.phase), frame_len)


def _check_basis(mat: np.ndarray, axis_len: int, axis: int, what: str) -> None:
    if mat.shape[axis] != axis_len:
        raise ValueError(f"{what} length {axis_len} does not match basis shape {mat.shape}")


def analysis_basis(frame: np.ndarray, basis: BasisPair) -> np.ndarray:
    """Project time frames on the analysis bank: ``w = U @ frame``."""
    frame = np.asarray(frame)
    _check_basis(basis.analysis, frame.shape[-1], 1, "frame")
    return frame @ basis.analysis.T


def apply_feature_mask(features: np.ndarray, mask: np.ndarray) -> np.ndarray:
    features = np.asarray(features)
    mask = np.asarray(mask)
    if features.shape[-1] != mask.shape[-1]:
        raise ValueError(f"feature length {features.shape[-1]} != mask length {mask.shape[-1]}")
    _check_mask(mask)
    return features * mask


def synthesis_basis(features: np.ndarray, basis: BasisPair) -> np.ndarray:
    """Map features back to a time frame: ``frame = V.T @ features``."""
    features = np.asarray(features)
    _check_basis(basis.synthesis, features.shape[-1], 0, "feature")
    return features @ basis.synthesis

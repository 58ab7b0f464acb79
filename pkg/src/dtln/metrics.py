"""Training objectives and objective quality measures."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .stoi import stoi
from .transforms import FRAME_LEN, HOP, frame_signal, rfft

SNR_EPS = 1e-8
SILENCE_POWER = 1e-10
DB_CAP = 60.0
_DB = 10.0 / np.log(10.0)

__all__ = [
    "SilentTargetError",
    "neg_snr_loss",
    "neg_snr_loss_grad",
    "si_snr",
    "si_sdr",
    "magnitude_mse_loss",
    "stoi",
    "MetricReport",
]


class SilentTargetError(ValueError):
    """The reference has (almost) no energy, so an SNR target is meaningless."""


def _pair(estimate, reference) -> Tuple[np.ndarray, np.ndarray]:
    est = np.asarray(getattr(estimate, "samples", estimate), dtype=np.float64)
    ref = np.asarray(getattr(reference, "samples", reference), dtype=np.float64)
    if est.shape != ref.shape:
        raise ValueError(f"estimate and reference lengths differ: {est.shape} vs {ref.shape}")
    return est, ref


def neg_snr_loss_grad(estimate, reference) -> Tuple[float, np.ndarray]:
    """Scale-sensitive negative SNR in dB and its gradient w.r.t. the estimate."""
    est, ref = _pair(estimate, reference)
    p_ref = float(np.sum(ref * ref))
    if p_ref < SILENCE_POWER:
        raise SilentTargetError("silent target")
    err = ref - est
    p_err = float(np.sum(err * err))
    loss = _DB * (np.log(p_err + SNR_EPS) - np.log(p_ref + SNR_EPS))
    grad = -2.0 * _DB * err / (p_err + SNR_EPS)
    return loss, grad


def neg_snr_loss(estimate, reference) -> float:
    """``-10 log10((|ref|^2 + eps) / (|ref - est|^2 + eps))``; lower is better."""
    return neg_snr_loss_grad(estimate, reference)[0]


def si_snr(estimate, reference) -> float:
    """Scale-invariant SNR (= SI-SDR) in dB, clipped to +-60 dB."""
    est, ref = _pair(estimate, reference)
    est = est - est.mean()
    ref = ref - ref.mean()
    p_ref = np.dot(ref, ref)
    if p_ref <= 0.0:
        raise ValueError("reference is all zeros")
    target = (np.dot(est, ref) / p_ref) * ref
    resid = est - target
    num, den = np.dot(target, target), np.dot(resid, resid)
    if den == 0.0:
        return DB_CAP
    if num == 0.0:
        return -DB_CAP
    return float(np.clip(10.0 * np.log10(num / den), -DB_CAP, DB_CAP))


si_sdr = si_snr


def magnitude_mse_loss(estimate, reference, frame_len: int = FRAME_LEN, hop: int = HOP) -> float:
    """Mean squared difference of STFT magnitudes; blind to phase."""
    est, ref = _pair(estimate, reference)
    a = np.abs(rfft(frame_signal(est, frame_len, hop)))
    b = np.abs(rfft(frame_signal(ref, frame_len, hop)))
    return float(np.mean((a - b) ** 2))


@dataclass
class MetricReport:
    files: List[str] = field(default_factory=list)
    si_sdr: List[float] = field(default_factory=list)
    stoi: List[float] = field(default_factory=list)
    noisy_si_sdr: List[float] = field(default_factory=list)
    noisy_stoi: List[float] = field(default_factory=list)
    missing: List[str] = field(default_factory=list)

    def add(self, name, sdr, st, noisy_sdr, noisy_st):
        self.files.append(name)
        self.si_sdr.append(sdr)
        self.stoi.append(st)
        self.noisy_si_sdr.append(noisy_sdr)
        self.noisy_stoi.append(noisy_st)

    @property
    def count(self) -> int:
        return len(self.files)

    def means(self) -> dict:
        cols = ("si_sdr", "stoi", "noisy_si_sdr", "noisy_stoi")
        if not self.files:
            return {c: float("nan") for c in cols}
        return {c: float(np.mean(getattr(self, c))) for c in cols}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["file", "si_sdr_db", "stoi", "noisy_si_sdr_db", "noisy_stoi"])
            for row in zip(self.files, self.si_sdr, self.stoi, self.noisy_si_sdr, self.noisy_stoi):
                w.writerow([row[0]] + [f"{v:.6f}" for v in row[1:]])
            m = self.means()
            w.writerow(["mean"] + [f"{m[c]:.6f}" for c in ("si_sdr", "stoi", "noisy_si_sdr", "noisy_stoi")])

"""WAV I/O and SNR-controlled speech + noise mixture datasets."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.io import wavfile

from .transforms import SAMPLE_RATE, AudioBuffer

log = logging.getLogger(__name__)

SNR_LOW, SNR_HIGH, SNR_LEVELS = -5.0, 25.0, 30
SEGMENT_SECONDS = 15.0
TRAIN_FRACTION = 0.8
PEAK_LIMIT = 0.99
MANIFEST_NAME = "manifest.tsv"


class WavError(ValueError):
    """Unreadable or unsupported WAV file."""


class InsufficientMaterialError(ValueError):
    pass


def read_wav(path) -> AudioBuffer:
    """Read a mono 16 kHz PCM16 or float32 WAV; PCM16 is scaled by 1/32768."""
    try:
        rate, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise
    except Exception as exc:  # scipy raises ValueError/struct.error/EOFError on bad headers
        raise WavError(f"{path}: malformed WAV file ({exc})") from exc
    if rate != SAMPLE_RATE:
        raise WavError(f"{path}: sample rate {rate} Hz, resampling unsupported (need {SAMPLE_RATE} Hz)")
    if data.ndim != 1:
        raise WavError(f"{path}: {data.shape[1]} channels, only mono is supported")
    if data.size == 0:
        raise WavError(f"{path}: empty data chunk")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise WavError(f"{path}: sample format {data.dtype} unsupported (PCM16 or float32 only)")
    return AudioBuffer(samples, rate)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    """Saturating float -> int16 conversion."""
    return np.clip(np.round(np.asarray(samples, np.float64) * 32768.0), -32768, 32767).astype(np.int16)


def write_wav(path, audio, fmt: str = "pcm16") -> None:
    samples = audio.samples if isinstance(audio, AudioBuffer) else np.asarray(audio)
    if fmt == "pcm16":
        data = to_pcm16(samples)
    elif fmt == "float32":
        data = samples.astype(np.float32)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    wavfile.write(str(path), SAMPLE_RATE, data)


def snr_grid(low: float = SNR_LOW, high: float = SNR_HIGH, levels: int = SNR_LEVELS) -> np.ndarray:
    return np.linspace(low, high, levels)


def draw_snr(rng: np.random.Generator, grid: Optional[np.ndarray] = None) -> float:
    grid = snr_grid() if grid is None else grid
    return float(grid[rng.integers(len(grid))])


def _power(x: np.ndarray) -> float:
    return float(np.mean(x * x))


def mix_at_snr(speech, noise, snr_db: float, rng=None) -> Tuple[np.ndarray, np.ndarray]:
    """Mix speech and noise at ``snr_db`` (full-segment energy, no VAD weighting).

    Noise longer than the speech is cropped at a random offset drawn from
    ``rng``. If the mixture would exceed a peak of 0.99, mixture and clean
    reference are scaled together so that ``mixture - reference`` stays the
    scaled noise. Returns ``(mixture, reference)``.
    """
    s = np.asarray(getattr(speech, "samples", speech), dtype=np.float64)
    n = np.asarray(getattr(noise, "samples", noise), dtype=np.float64)
    if len(n) < len(s):
        raise ValueError(f"noise ({len(n)} samples) shorter than speech ({len(s)} samples)")
    rng = np.random.default_rng(rng)
    off = int(rng.integers(0, len(n) - len(s) + 1))
    n = n[off : off + len(s)]
    p_s, p_n = _power(s), _power(n)
    if p_s <= 0.0:
        raise ValueError("speech segment is silent")
    if p_n <= 0.0:
        raise ValueError("noise segment is silent")
    gain = np.sqrt(p_s / (p_n * 10.0 ** (snr_db / 10.0)))
    mixture = s + gain * n
    peak = np.max(np.abs(mixture))
    if peak > PEAK_LIMIT:
        scale = PEAK_LIMIT / peak
        return mixture * scale, s * scale
    return mixture, s.copy()


@dataclass
class ManifestEntry:
    split: str
    mixture: Path
    reference: Path
    snr_db: float


@dataclass
class DatasetManifest:
    entries: List[ManifestEntry] = field(default_factory=list)
    snr_levels: np.ndarray = field(default_factory=snr_grid)

    def split(self, name: str) -> List[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def write(self, path) -> None:
        path = Path(path)
        base = path.parent
        with open(path, "w") as fh:
            for e in self.entries:
                fh.write(f"{e.split}\t{_rel(e.mixture, base)}\t{_rel(e.reference, base)}\t{e.snr_db:.4f}\n")

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        entries = []
        for lineno, line in enumerate(path.read_text().splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4 or parts[0] not in ("train", "val"):
                raise ValueError(f"{path}:{lineno}: expected 'split<TAB>mixture<TAB>reference<TAB>snr_db'")
            split, mix, ref, snr = parts
            entries.append(ManifestEntry(split, _abs(mix, path.parent), _abs(ref, path.parent), float(snr)))
        return cls(entries)


def _rel(p: Path, base: Path) -> str:
    try:
        return str(Path(p).resolve().relative_to(base.resolve()))
    except ValueError:
        return str(p)


def _abs(p: str, base: Path) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


def _load_dir(d) -> List[np.ndarray]:
    files = sorted(Path(d).glob("*.wav"))
    if not files:
        raise InsufficientMaterialError(f"{d}: no .wav files")
    return [read_wav(f).samples for f in files]


def _draw_segment(pool: Sequence[np.ndarray], length: int, rng: np.random.Generator) -> np.ndarray:
    """Concatenate randomly chosen source files until ``length`` samples are covered, then crop."""
    parts, total = [], 0
    while total < length:
        clip = pool[int(rng.integers(len(pool)))]
        parts.append(clip)
        total += len(clip)
    joined = np.concatenate(parts)
    off = int(rng.integers(0, len(joined) - length + 1))
    return joined[off : off + length]


def split_indices(n: int, seed: int, train_fraction: float = TRAIN_FRACTION) -> np.ndarray:
    """Boolean ``is_train`` mask with ``round(train_fraction * n)`` seeded picks."""
    order = np.random.default_rng([seed, 0x5EED]).permutation(n)
    is_train = np.zeros(n, bool)
    is_train[order[: int(round(train_fraction * n))]] = True
    return is_train


def build_dataset(
    speech_dir,
    noise_dir,
    hours: float,
    out_dir,
    seed: int = 0,
    segment_seconds: float = SEGMENT_SECONDS,
) -> DatasetManifest:
    """Write ``hours`` of 15 s mixture/reference pairs and an 80:20 manifest.

    Each pair draws its SNR uniformly from the 30-level grid over
    [-5, 25] dB. Randomness for pair ``i`` comes from ``(seed, i)`` only.
    """
    out = Path(out_dir)
    speech = _load_dir(speech_dir)
    noise = _load_dir(noise_dir)
    seg = int(round(segment_seconds * SAMPLE_RATE))
    shortfall = []
    for label, pool in (("speech", speech), ("noise", noise)):
        have = sum(len(x) for x in pool)
        if have < seg:
            shortfall.append(f"{label}: {have / SAMPLE_RATE:.2f} s available, {segment_seconds:.2f} s needed")
    if shortfall:
        raise InsufficientMaterialError("insufficient source material; " + "; ".join(shortfall))

    n_pairs = int(round(hours * 3600.0 / segment_seconds))
    if n_pairs < 1:
        raise ValueError(f"{hours} h is less than one {segment_seconds} s segment")
    (out / "noisy").mkdir(parents=True, exist_ok=True)
    (out / "clean").mkdir(parents=True, exist_ok=True)
    grid = snr_grid()
    is_train = split_indices(n_pairs, seed)
    manifest = DatasetManifest(snr_levels=grid)
    for i in range(n_pairs):
        rng = np.random.default_rng([seed, i])
        snr = draw_snr(rng, grid)
        for _ in range(100):
            s = _draw_segment(speech, seg, rng)
            if _power(s) > 1e-10:
                break
        else:
            raise InsufficientMaterialError(f"pair {i}: could not find a non-silent speech segment")
        n = _draw_segment(noise, seg, rng)
        mix, ref = mix_at_snr(s, n, snr, rng)
        mix_path = out / "noisy" / f"pair_{i:05d}.wav"
        ref_path = out / "clean" / f"pair_{i:05d}.wav"
        write_wav(mix_path, mix)
        write_wav(ref_path, ref)
        manifest.entries.append(ManifestEntry("train" if is_train[i] else "val", mix_path, ref_path, snr))
    manifest.write(out / MANIFEST_NAME)
    log.info("wrote %d pairs (%d train / %d val) to %s", n_pairs, is_train.sum(), n_pairs - is_train.sum(), out)
    return manifest


def load_pairs(entries: Sequence[ManifestEntry]) -> Tuple[List[np.ndarray], List[np.ndarray], int]:
    """Read (mixture, reference) arrays; unreadable entries are skipped and counted."""
    noisy, clean, skipped = [], [], 0
    for e in entries:
        try:
            m, r = read_wav(e.mixture).samples, read_wav(e.reference).samples
        except (OSError, WavError) as exc:
            log.warning("skipping %s: %s", e.mixture, exc)
            skipped += 1
            continue
        noisy.append(m)
        clean.append(r)
    return noisy, clean, skipped

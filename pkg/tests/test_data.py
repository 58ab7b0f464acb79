import struct

import numpy as np
import pytest
from scipy.io import wavfile

from dtln.data import (
    DatasetManifest,
    InsufficientMaterialError,
    WavError,
    build_dataset,
    draw_snr,
    mix_at_snr,
    read_wav,
    snr_grid,
    split_indices,
    write_wav,
)
from dtln.synth import write_synthetic_corpus
from dtln.transforms import AudioBuffer


def test_wav_round_trip(tmp_path):
    t = np.arange(16000) / 16000
    x = 0.5 * np.sin(2 * np.pi * 440 * t)
    write_wav(tmp_path / "a.wav", AudioBuffer(x))
    y = read_wav(tmp_path / "a.wav")
    assert y.sample_rate == 16000 and len(y) == 16000
    assert np.max(np.abs(y.samples - x)) <= 1 / 32768


def test_wav_float32(tmp_path):
    x = np.random.default_rng(0).uniform(-1, 1, 1000)
    write_wav(tmp_path / "f.wav", x, fmt="float32")
    np.testing.assert_array_equal(read_wav(tmp_path / "f.wav").samples, x.astype(np.float32))


def test_wav_saturates(tmp_path):
    write_wav(tmp_path / "s.wav", np.array([2.0, -2.0, 0.0]))
    _, raw = wavfile.read(tmp_path / "s.wav")
    assert list(raw) == [32767, -32768, 0]


def test_wav_rejections(tmp_path):
    wavfile.write(tmp_path / "hi.wav", 44100, np.zeros(100, np.int16))
    with pytest.raises(WavError, match="resampling unsupported"):
        read_wav(tmp_path / "hi.wav")
    wavfile.write(tmp_path / "st.wav", 16000, np.zeros((100, 2), np.int16))
    with pytest.raises(WavError, match="mono"):
        read_wav(tmp_path / "st.wav")
    wavfile.write(tmp_path / "empty.wav", 16000, np.zeros(0, np.int16))
    with pytest.raises(WavError, match="empty"):
        read_wav(tmp_path / "empty.wav")
    (tmp_path / "junk.wav").write_bytes(b"RIFF" + struct.pack("<I", 4) + b"JUNK")
    with pytest.raises(WavError, match="malformed"):
        read_wav(tmp_path / "junk.wav")


def test_mix_gain_examples(rng):
    s = rng.standard_normal(1000) * 0.05
    n = rng.standard_normal(1000)
    n *= np.sqrt(np.mean(s**2) / np.mean(n**2))
    mix, ref = mix_at_snr(s, n, 0.0, 0)
    np.testing.assert_allclose(mix - ref, n, atol=1e-12)  # g = 1
    mix, ref = mix_at_snr(s, n, 20 * np.log10(2), 0)
    np.testing.assert_allclose(mix - ref, 0.5 * n, atol=1e-12)


@pytest.mark.parametrize("snr", [-5.0, 0.0, 7.3, 25.0])
def test_mix_measured_snr(snr, rng):
    s = rng.standard_normal(20000) * 0.1
    n = rng.standard_normal(30000) * 0.3
    mix, ref = mix_at_snr(s, n, snr, rng)
    noise = mix - ref
    assert 10 * np.log10(np.sum(ref**2) / np.sum(noise**2)) == pytest.approx(snr, abs=0.01)
    assert np.max(np.abs(mix)) <= 0.99 + 1e-12


def test_mix_peak_limit_keeps_additivity(rng):
    s = rng.standard_normal(5000)  # peaks well above 0.99
    n = rng.standard_normal(5000)
    mix, ref = mix_at_snr(s, n, -5.0, rng)
    assert np.max(np.abs(mix)) == pytest.approx(0.99)
    scale = ref[0] / s[0]
    gain = np.sqrt(np.mean(s**2) / (np.mean(n**2) * 10 ** (-0.5)))
    assert np.max(np.abs((mix - ref) - scale * gain * n)) <= 1e-9


def test_mix_errors(rng):
    with pytest.raises(ValueError):
        mix_at_snr(np.zeros(100), rng.standard_normal(100), 0)
    with pytest.raises(ValueError):
        mix_at_snr(rng.standard_normal(100), np.zeros(100), 0)
    with pytest.raises(ValueError):
        mix_at_snr(rng.standard_normal(100), rng.standard_normal(50), 0)


def test_snr_grid():
    g = snr_grid()
    assert len(g) == 30 and g[0] == -5 and g[-1] == 25
    np.testing.assert_allclose(np.diff(g), 30 / 29)


def test_snr_draws_cover_grid():
    g = snr_grid()
    draws = [draw_snr(np.random.default_rng([0, i]), g) for i in range(3000)]
    counts = np.array([np.sum(np.isclose(draws, v)) for v in g])
    assert np.all(counts > 0)
    assert np.all(np.abs(counts - 100) <= 40)


@pytest.mark.parametrize("n", [1, 5, 12, 120, 121])
def test_split_ratio(n):
    is_train = split_indices(n, 3)
    assert abs(is_train.sum() - 0.8 * n) <= 1


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    write_synthetic_corpus(root / "speech", root / "noise", n_speech=4, n_noise=3, seconds=8.0, seed=1)
    return root


def test_build_dataset(corpus, tmp_path):
    m = build_dataset(corpus / "speech", corpus / "noise", 0.05, tmp_path / "ds", seed=2)
    assert len(m.entries) == 12
    assert len(m.split("train")) == 10 and len(m.split("val")) == 2
    paths = {e.mixture for e in m.entries}
    assert len(paths) == 12  # disjoint and exhaustive
    again = DatasetManifest.read(tmp_path / "ds" / "manifest.tsv")
    assert [(e.split, e.mixture.name, e.snr_db) for e in again.entries] == [
        (e.split, e.mixture.name, round(e.snr_db, 4)) for e in m.entries
    ]
    grid = snr_grid()
    for e in again.entries:
        mix, ref = read_wav(e.mixture).samples, read_wav(e.reference).samples
        assert len(mix) == len(ref) == 15 * 16000
        assert np.max(np.abs(mix)) <= 0.99 + 1 / 32768
        assert np.min(np.abs(grid - e.snr_db)) < 1e-3
        measured = 10 * np.log10(np.sum(ref**2) / np.sum((mix - ref) ** 2))
        assert measured == pytest.approx(e.snr_db, abs=0.1)  # after PCM16 quantization
    line = (tmp_path / "ds" / "manifest.tsv").read_text().splitlines()[0].split("\t")
    assert len(line) == 4 and line[0] in ("train", "val")


def test_build_dataset_hours_arithmetic(corpus, tmp_path):
    m = build_dataset(corpus / "speech", corpus / "noise", 0.5, tmp_path / "half", seed=0, segment_seconds=0.5 * 3600 / 120)
    assert len(m.entries) == 120 and len(m.split("train")) == 96 and len(m.split("val")) == 24


def test_build_dataset_deterministic(corpus, tmp_path):
    build_dataset(corpus / "speech", corpus / "noise", 0.02, tmp_path / "a", seed=9)
    build_dataset(corpus / "speech", corpus / "noise", 0.02, tmp_path / "b", seed=9)
    for name in ("manifest.tsv", "noisy/pair_00000.wav", "clean/pair_00003.wav"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_build_dataset_shortfall(tmp_path):
    write_synthetic_corpus(tmp_path / "s", tmp_path / "n", n_speech=1, n_noise=1, seconds=3.0)
    with pytest.raises(InsufficientMaterialError, match="speech: 3.00 s available"):
        build_dataset(tmp_path / "s", tmp_path / "n", 0.05, tmp_path / "out")

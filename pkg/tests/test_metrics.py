import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtln.metrics import (
    MetricReport,
    SilentTargetError,
    magnitude_mse_loss,
    neg_snr_loss,
    neg_snr_loss_grad,
    si_snr,
    stoi,
)
from dtln.synth import synth_noise, synth_speech
from dtln.transforms import frame_signal, rfft

from .conftest import numeric_grad, rel_error


def orthogonal_pair(rng, n=4000, ratio=1.0):
    """Zero-mean reference and an error orthogonal to it with |e|^2 = ratio * |ref|^2."""
    ref = rng.standard_normal(n)
    ref -= ref.mean()
    e = rng.standard_normal(n)
    e -= e.mean()
    e -= (e @ ref) / (ref @ ref) * ref
    e *= np.sqrt(ratio * (ref @ ref) / (e @ e))
    return ref, e


def test_neg_snr_analytic(rng):
    ref = rng.standard_normal(1000)
    ref /= np.sqrt(np.sum(ref**2))  # power 1
    assert neg_snr_loss(ref, ref) < -60
    assert neg_snr_loss(0.5 * ref, ref) == pytest.approx(-10 * np.log10(4), abs=1e-3)
    assert neg_snr_loss(0.5 * ref, ref) == pytest.approx(-6.021, abs=1e-3)
    ref, e = orthogonal_pair(rng)
    assert neg_snr_loss(ref + e, ref) == pytest.approx(0.0, abs=1e-3)


def test_neg_snr_scale_behaviour(rng):
    est, ref = rng.standard_normal(500), rng.standard_normal(500)
    for a in (0.1, -2.0, 7.0):
        assert neg_snr_loss(a * est, a * ref) == pytest.approx(neg_snr_loss(est, ref), abs=1e-6)
    assert abs(neg_snr_loss(ref, ref) - neg_snr_loss(0.5 * ref, ref)) > 1


def test_neg_snr_silent_target():
    with pytest.raises(SilentTargetError, match="silent target"):
        neg_snr_loss(np.ones(10), np.zeros(10))


def test_neg_snr_gradient(rng):
    est, ref = rng.standard_normal(50), rng.standard_normal(50)
    _, g = neg_snr_loss_grad(est, ref)
    assert rel_error(g, numeric_grad(lambda: neg_snr_loss(est, ref), est)) < 1e-4


def test_si_snr_analytic(rng):
    ref, e = orthogonal_pair(rng, ratio=0.1)
    assert si_snr(3 * ref, ref) == 60.0
    assert si_snr(e, ref) == pytest.approx(-60.0, abs=1e-6) or si_snr(e, ref) < -59
    assert si_snr(ref + e, ref) == pytest.approx(10.0, abs=1e-3)
    with pytest.raises(ValueError):
        si_snr(ref, np.zeros_like(ref))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
def test_si_snr_scale_invariant(seed, a):
    r = np.random.default_rng(seed)
    ref = r.standard_normal(800)
    est = ref + 0.5 * r.standard_normal(800)
    assert abs(si_snr(a * est, ref) - si_snr(est, ref)) <= 1e-9


def test_magnitude_mse(rng):
    ref = rng.standard_normal(2048)
    assert magnitude_mse_loss(ref, ref) == 0
    assert magnitude_mse_loss(-ref, ref) == pytest.approx(0, abs=1e-20)
    mags = np.abs(rfft(frame_signal(ref)))
    assert magnitude_mse_loss(np.zeros_like(ref), ref) == pytest.approx(np.mean(mags**2))
    with pytest.raises(ValueError):
        magnitude_mse_loss(np.zeros(100), np.zeros(100))


def test_magnitude_mse_phase_blind(rng):
    # A circular shift inside a frame changes only the phase of its spectrum.
    ref = rng.standard_normal(512)
    est = np.roll(ref, 37)
    assert magnitude_mse_loss(est, ref) == pytest.approx(0, abs=1e-20)


# STOI -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def speech():
    return synth_speech(3.0, 11)


def test_stoi_identity(speech):
    assert stoi(speech, speech) > 0.99


def test_stoi_noise_vs_speech(speech):
    noise = synth_noise(3.0, 5, "white")
    assert stoi(noise, speech) < 0.4


def test_stoi_monotone_in_snr(speech):
    noise = synth_noise(3.0, 6, "pink")
    scale = lambda snr: np.sqrt(np.mean(speech**2) / np.mean(noise**2) / 10 ** (snr / 10))  # noqa: E731
    assert stoi(speech + scale(20) * noise, speech) > stoi(speech + scale(0) * noise, speech)


def test_stoi_range_and_errors(speech, rng):
    v = stoi(rng.standard_normal(len(speech)), speech)
    assert -1 <= v <= 1
    with pytest.raises(ValueError):
        stoi(speech[:8000], speech[:8000])
    with pytest.raises(ValueError):
        stoi(speech[:-1], speech)


@pytest.mark.parametrize("snr", [-5, 0, 5, 15])
def test_stoi_matches_reference_implementation(speech, snr):
    pystoi = pytest.importorskip("pystoi")
    noise = synth_noise(3.0, snr + 100)
    noisy = speech + np.sqrt(np.mean(speech**2) / np.mean(noise**2) / 10 ** (snr / 10)) * noise
    assert stoi(noisy, speech) == pytest.approx(pystoi.stoi(speech, noisy, 16000), abs=0.02)


def test_report_csv(tmp_path):
    rep = MetricReport()
    rep.add("a.wav", 10.0, 0.9, 5.0, 0.8)
    rep.add("b.wav", 20.0, 0.7, 7.0, 0.6)
    rep.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "file,si_sdr_db,stoi,noisy_si_sdr_db,noisy_stoi"
    assert len(lines) == 4 and lines[-1].startswith("mean,15.000000,0.800000,6.000000,0.700000")
    assert rep.count == 2

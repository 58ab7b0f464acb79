import numpy as np
import pytest

from dtln.cli import BenchReport, main, run_bench
from dtln.data import read_wav, write_wav
from dtln.models import build_model
from dtln.synth import synth_noise, synth_speech, write_synthetic_corpus
from dtln.weights import load_weights, save_weights


@pytest.fixture(scope="module")
def weights(tmp_path_factory):
    path = tmp_path_factory.mktemp("w") / "dtln.wts"
    save_weights(build_model("DTLN", seed=3), path)
    return path


@pytest.fixture
def noisy_wav(tmp_path):
    x = synth_speech(1.3, 4) + 0.5 * synth_noise(1.3, 5)
    path = tmp_path / "noisy.wav"
    write_wav(path, x)
    return path


def test_denoise_zero_signal(weights, tmp_path):
    write_wav(tmp_path / "z.wav", np.zeros(5000))
    assert main(["denoise", "--weights", str(weights), "--in", str(tmp_path / "z.wav"), "--out", str(tmp_path / "o.wav")]) == 0
    out = read_wav(tmp_path / "o.wav").samples
    assert len(out) == 5000 and np.all(out == 0)


def test_denoise_modes_agree(weights, noisy_wav, tmp_path):
    for mode in ("stream", "sequence"):
        args = ["denoise", "--weights", str(weights), "--in", str(noisy_wav), "--out", str(tmp_path / f"{mode}.wav"), "--mode", mode]
        assert main(args) == 0
    a = read_wav(tmp_path / "stream.wav").samples
    b = read_wav(tmp_path / "sequence.wav").samples
    assert len(a) == len(b) == len(read_wav(noisy_wav).samples)
    # PCM16 output: agreement up to one quantization step
    assert np.max(np.abs(a - b)) <= 1e-5 + 1 / 32768
    assert np.all(np.isfinite(a)) and np.max(np.abs(a)) <= 1


def test_denoise_float_mode_parity(weights, noisy_wav):
    from dtln.models import enhance

    params = load_weights(weights)
    x = read_wav(noisy_wav).samples
    assert np.max(np.abs(enhance(params, x, "stream") - enhance(params, x, "sequence"))) <= 1e-5


def test_denoise_errors(weights, noisy_wav, tmp_path, capsys):
    missing = tmp_path / "nope.wts"
    assert main(["denoise", "--weights", str(missing), "--in", str(noisy_wav), "--out", str(tmp_path / "o.wav")]) == 4
    assert str(missing) in capsys.readouterr().err
    (tmp_path / "bad.wts").write_bytes(b"garbage bytes here")
    assert main(["denoise", "--weights", str(tmp_path / "bad.wts"), "--in", str(noisy_wav), "--out", str(tmp_path / "o.wav")]) == 4
    assert main(["denoise", "--weights", str(weights), "--in", str(tmp_path / "none.wav"), "--out", str(tmp_path / "o.wav")]) == 3
    (tmp_path / "junk.wav").write_bytes(b"not a wav")
    assert main(["denoise", "--weights", str(weights), "--in", str(tmp_path / "junk.wav"), "--out", str(tmp_path / "o.wav")]) == 3
    assert main(["denoise", "--weights", str(weights)]) == 2
    assert main(["denoise", "--weights", str(weights), "--in", "a", "--out", "b", "--mode", "batch"]) == 2
    assert main([]) == 2


def test_bench_report(weights, tmp_path, capsys):
    assert main(["bench", "--weights", str(weights), "--seconds", "1", "--csv", str(tmp_path / "b.csv")]) == 0
    text = capsys.readouterr().out
    assert "real-time factor" in text and "frames" in text
    assert (tmp_path / "b.csv").read_text().splitlines()[0].startswith("mode,frames,mean_ms")
    assert main(["bench", "--weights", str(tmp_path / "x.wts")]) == 4


def test_bench_frame_count_and_ordering(weights):
    params = load_weights(weights)
    rep = run_bench(params, 10.0, "sequence")
    # floor((160000 - 512) / 128) + 1; the division is exact, so this is 1247
    assert rep.frames == (160000 - 512) // 128 + 1 == 1247
    seq_ms = rep.mean_ms
    rep = run_bench(params, 1.0, "stream")
    assert rep.frames == (16000 - 512) // 128 + 1
    assert seq_ms < rep.mean_ms  # whole-sequence matmuls amortize per-call overhead
    assert rep.max_ms >= rep.p95_ms >= rep.min_ms > 0
    assert rep.real_time_factor == pytest.approx(rep.mean_ms / 8.0)


def test_bench_report_text():
    rep = BenchReport("stream", 10, 1.0, 2.0, 3.0, 0.5)
    assert rep.real_time_factor == pytest.approx(0.125)
    lines = rep.as_text().splitlines()
    assert len({line.index(" ", len("real-time factor")) for line in lines}) == 1  # aligned


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("src")
    write_synthetic_corpus(root / "speech", root / "noise", n_speech=3, n_noise=3, seconds=6.0, seed=4)
    return root


def test_build_dataset_command(corpus, tmp_path):
    out = tmp_path / "ds"
    args = ["build-dataset", "--speech", str(corpus / "speech"), "--noise", str(corpus / "noise"), "--hours", "0.05", "--out", str(out), "--seed", "1"]
    assert main(args) == 0
    assert len(list((out / "noisy").glob("*.wav"))) == 12
    assert len((out / "manifest.tsv").read_text().splitlines()) == 12
    # deterministic given --seed
    args[-3] = str(tmp_path / "ds2")
    assert main(args) == 0
    assert (out / "manifest.tsv").read_text() == (tmp_path / "ds2" / "manifest.tsv").read_text()


def test_build_dataset_errors(corpus, tmp_path):
    base = ["build-dataset", "--speech", str(corpus / "speech"), "--noise", str(corpus / "noise"), "--out", str(tmp_path / "d")]
    assert main(base + ["--hours", "-1"]) == 2
    assert main(base + ["--hours", "abc"]) == 2
    assert main(["build-dataset", "--speech", str(tmp_path / "none"), "--noise", str(corpus / "noise"), "--hours", "0.01", "--out", str(tmp_path / "d")]) == 3
    assert main(["build-dataset", "--speech", str(corpus / "speech"), "--noise", str(corpus / "noise"), "--hours", "0.01", "--out", str(tmp_path / "d")]) in (0,)
    (tmp_path / "tiny").mkdir()
    write_wav(tmp_path / "tiny" / "a.wav", synth_speech(1.0, 0))
    assert main(["build-dataset", "--speech", str(tmp_path / "tiny"), "--noise", str(corpus / "noise"), "--hours", "0.01", "--out", str(tmp_path / "d2")]) == 5


@pytest.fixture(scope="module")
def tiny_dataset(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny") / "ds"
    assert main(["build-dataset", "--speech", str(corpus / "speech"), "--noise", str(corpus / "noise"), "--hours", "0.0125", "--out", str(out)]) == 0
    return out


def test_train_and_eval_commands(tiny_dataset, tmp_path, capsys):
    cfg = tmp_path / "train.cfg"
    cfg.write_text(f"topology = B4\nmax_epochs = 2\nbatch_size = 2\nmanifest = {tiny_dataset / 'manifest.tsv'}\ncheckpoint_dir = ckpt\n")
    assert main(["train", "--config", str(cfg)]) == 0
    ckpt = tmp_path / "ckpt" / "best.wts"
    assert ckpt.is_file()
    rows = (tmp_path / "ckpt" / "train_log.csv").read_text().splitlines()
    assert len(rows) == 3  # header + 2 epochs
    assert load_weights(ckpt).spec.name == "B4"

    csv_path = tmp_path / "eval.csv"
    assert main(["eval", "--weights", str(ckpt), "--manifest", str(tiny_dataset / "manifest.tsv"), "--out", str(csv_path)]) == 0
    assert "SI-SDR" in capsys.readouterr().out
    lines = csv_path.read_text().splitlines()
    assert lines[0].startswith("file,si_sdr_db") and lines[-1].startswith("mean,")


def test_train_and_eval_errors(tiny_dataset, tmp_path):
    assert main(["train", "--config", str(tmp_path / "missing.cfg")]) == 3
    (tmp_path / "bad.cfg").write_text("learning_rate = 3\n")
    assert main(["train", "--config", str(tmp_path / "bad.cfg")]) == 3
    assert main(["eval", "--weights", str(tmp_path / "absent.wts"), "--manifest", str(tiny_dataset / "manifest.tsv")]) == 4

"""Command-line entry point: ``dtln denoise|bench|train|build-dataset|eval``.

Exit codes: 0 success, 2 bad arguments, 3 unreadable input,
4 missing or mismatched weights, 5 insufficient dataset material,
6 training diverged, 1 any other failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import InsufficientMaterialError, WavError, build_dataset, read_wav, write_wav
from .models import forward_sequence, init_stream_state, step_frame, enhance
from .synth import synth_noise
from .training import TrainConfig, TrainingDiverged, train, evaluate
from .transforms import HOP, SAMPLE_RATE, frame_signal
from .weights import WeightFileError, load_weights

log = logging.getLogger("dtln")

EXIT_OK, EXIT_FAIL, EXIT_ARGS, EXIT_INPUT, EXIT_WEIGHTS, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3, 4, 5, 6
WARMUP_FRAMES = 50


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _load(path):
    if not Path(path).is_file():
        raise CliError(EXIT_WEIGHTS, f"weight file not found: {path}")
    try:
        return load_weights(path)
    except WeightFileError as exc:
        raise CliError(EXIT_WEIGHTS, str(exc)) from exc


def _read(path):
    try:
        return read_wav(path)
    except (OSError, WavError) as exc:
        raise CliError(EXIT_INPUT, f"cannot read input {path}: {exc}") from exc


def cmd_denoise(args) -> int:
    params = _load(args.weights)
    audio = _read(args.inp)
    out = enhance(params, audio.samples, args.mode)
    out = np.nan_to_num(np.asarray(out, np.float64), nan=0.0, posinf=1.0, neginf=-1.0)
    write_wav(args.out, np.clip(out, -1.0, 1.0))
    log.info("wrote %d samples to %s", len(out), args.out)
    return EXIT_OK


@dataclass
class BenchReport:
    mode: str
    frames: int
    mean_ms: float
    p95_ms: float
    max_ms: float
    min_ms: float

    @property
    def hop_ms(self) -> float:
        return 1000.0 * HOP / SAMPLE_RATE

    @property
    def real_time_factor(self) -> float:
        return self.mean_ms / self.hop_ms

    def as_text(self) -> str:
        rows = [
            ("mode", self.mode),
            ("frames", str(self.frames)),
            ("mean ms", f"{self.mean_ms:.4f}"),
            ("p95 ms", f"{self.p95_ms:.4f}"),
            ("max ms", f"{self.max_ms:.4f}"),
            ("min ms", f"{self.min_ms:.4f}"),
            ("hop ms", f"{self.hop_ms:.4f}"),
            ("real-time factor", f"{self.real_time_factor:.4f}"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["mode", "frames", "mean_ms", "p95_ms", "max_ms", "min_ms", "real_time_factor"])
            w.writerow([self.mode, self.frames, self.mean_ms, self.p95_ms, self.max_ms, self.min_ms, self.real_time_factor])


def run_bench(params, seconds: float = 10.0, mode: str = "stream", seed: int = 0) -> BenchReport:
    """Time inference on synthetic noise; the first 50 frames are warmup and not reported."""
    spec = params.spec
    noise = synth_noise(seconds, seed, "white").astype(params.dtype)
    frames = frame_signal(noise, spec.frame_len, spec.hop)
    warm_sig = synth_noise(1.0, seed + 1, "white").astype(params.dtype)[: spec.frame_len + (WARMUP_FRAMES - 1) * spec.hop]
    warm = frame_signal(warm_sig, spec.frame_len, spec.hop)
    clock = time.perf_counter
    if mode == "stream":
        state = init_stream_state(params)
        for f in warm:
            _, state = step_frame(params, state, f)
        times = np.empty(len(frames))
        for k, f in enumerate(frames):
            t0 = clock()
            _, state = step_frame(params, state, f)
            times[k] = clock() - t0
    elif mode == "sequence":
        forward_sequence(params, warm_sig)
        t0 = clock()
        forward_sequence(params, noise)
        times = np.full(len(frames), (clock() - t0) / len(frames))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    ms = times * 1000.0
    return BenchReport(mode, len(frames), float(ms.mean()), float(np.percentile(ms, 95)), float(ms.max()), float(ms.min()))


def cmd_bench(args) -> int:
    if args.seconds * SAMPLE_RATE < 512:
        raise CliError(EXIT_ARGS, "--seconds must cover at least one 512-sample frame")
    params = _load(args.weights)
    report = run_bench(params, args.seconds, args.mode, args.seed)
    print(report.as_text())
    if args.csv:
        report.write_csv(args.csv)
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        config = TrainConfig.from_file(args.config)
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_INPUT, f"bad config {args.config}: {exc}") from exc
    if not Path(config.manifest).is_file():
        raise CliError(EXIT_INPUT, f"manifest not found: {config.manifest}")
    _, train_log = train(config)
    print(f"trained {len(train_log.epochs)} epochs, best epoch {train_log.best_epoch}, checkpoint in {config.checkpoint_dir}")
    return EXIT_OK


def cmd_build_dataset(args) -> int:
    if args.hours <= 0:
        raise CliError(EXIT_ARGS, "--hours must be positive")
    for d in (args.speech, args.noise):
        if not Path(d).is_dir():
            raise CliError(EXIT_INPUT, f"not a directory: {d}")
    manifest = build_dataset(args.speech, args.noise, args.hours, args.out, args.seed)
    print(f"{len(manifest.entries)} pairs ({len(manifest.split('train'))} train / {len(manifest.split('val'))} val) in {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    params = _load(args.weights)
    if not Path(args.manifest).is_file():
        raise CliError(EXIT_INPUT, f"manifest not found: {args.manifest}")
    report = evaluate(params, args.manifest, args.out, split=args.split or None, mode=args.mode)
    m = report.means()
    print(
        f"{report.count} files: SI-SDR {m['noisy_si_sdr']:.2f} -> {m['si_sdr']:.2f} dB, "
        f"STOI {m['noisy_stoi']:.3f} -> {m['stoi']:.3f}"
    )
    if report.missing:
        print(f"{len(report.missing)} files missing")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dtln", description="DTLN noise suppression: two stacked LSTM mask-estimation cores, STFT then learned basis")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("denoise", help="enhance one WAV file")
    d.add_argument("--weights", required=True)
    d.add_argument("--in", dest="inp", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--mode", choices=("stream", "sequence"), default="stream")
    d.set_defaults(func=cmd_denoise)

    b = sub.add_parser("bench", help="per-frame latency benchmark")
    b.add_argument("--weights", required=True)
    b.add_argument("--seconds", type=float, default=10.0)
    b.add_argument("--mode", choices=("stream", "sequence"), default="stream")
    b.add_argument("--csv")
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)

    t = sub.add_parser("train", help="train from a config file")
    t.add_argument("--config", required=True)
    t.set_defaults(func=cmd_train)

    bd = sub.add_parser("build-dataset", help="mix speech and noise into 15 s pairs")
    bd.add_argument("--speech", required=True)
    bd.add_argument("--noise", required=True)
    bd.add_argument("--hours", type=float, required=True)
    bd.add_argument("--out", required=True)
    bd.add_argument("--seed", type=int, default=0)
    bd.set_defaults(func=cmd_build_dataset)

    e = sub.add_parser("eval", help="SI-SDR / STOI over a manifest split")
    e.add_argument("--weights", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", help="CSV report path")
    e.add_argument("--split", default="val", help="train, val, or empty for all")
    e.add_argument("--mode", choices=("stream", "sequence"), default="sequence")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on bad arguments, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except InsufficientMaterialError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except WeightFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_WEIGHTS
    except (WavError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

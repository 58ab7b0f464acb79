"""Sequence training with Adam, global-norm clipping, plateau LR halving and early stopping."""
from __future__ import annotations

import configparser
import csv
import logging
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import layers as nn
from .data import DatasetManifest, load_pairs
from .metrics import MetricReport, SilentTargetError, neg_snr_loss_grad, si_sdr, stoi
from .models import ModelParams, backward, build_model, enhance, forward_sequence, get_topology
from .weights import save_weights

log = logging.getLogger(__name__)

IMPROVE_TOL = 1e-4
CHECKPOINT_NAME = "best.wts"
LOG_NAME = "train_log.csv"


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    topology: str = "DTLN"
    batch_size: int = 32
    lr: float = 1e-3
    clip_norm: float = 3.0
    lr_halve_patience: int = 3
    early_stop_patience: int = 10
    max_epochs: int = 200
    seed: int = 0
    manifest: str = ""
    checkpoint_dir: str = "checkpoints"
    micro_batch: int = 8  # samples per forward/backward pass; bounds memory only

    def __post_init__(self):
        get_topology(self.topology)
        if self.batch_size < 1 or self.micro_batch < 1:
            raise ValueError("batch_size and micro_batch must be >= 1")
        if self.lr_halve_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patience values must be positive")

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        """Parse ``key = value`` lines (``#`` comments allowed); keys are the field names."""
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        parser.optionxform = str
        parser.read_string("[train]\n" + Path(path).read_text())
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in parser["train"].items():
            if key not in known:
                raise ValueError(f"{path}: unknown config key {key!r}")
            kind = {"int": int, "float": float}.get(known[key], str)
            kwargs[key] = kind(raw)
        cfg = cls(**kwargs)
        base = Path(path).parent
        if cfg.manifest and not Path(cfg.manifest).is_absolute():
            cfg.manifest = str(base / cfg.manifest)
        if not Path(cfg.checkpoint_dir).is_absolute():
            cfg.checkpoint_dir = str(base / cfg.checkpoint_dir)
        return cfg


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    wall_time: float


@dataclass
class TrainLog:
    epochs: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    skipped_files: int = 0
    silent_targets: int = 0

    @property
    def train_losses(self):
        return [e.train_loss for e in self.epochs]

    @property
    def val_losses(self):
        return [e.val_loss for e in self.epochs]

    @property
    def lrs(self):
        return [e.lr for e in self.epochs]


class PlateauSchedule:
    """Validation-driven LR halving and early stopping.

    An epoch improves when its loss is below ``best - tol``. Both counters
    reset on improvement; a halving resets only the halving counter.
    """

    def __init__(self, lr: float, halve_patience: int = 3, stop_patience: int = 10, tol: float = IMPROVE_TOL):
        self.lr = lr
        self.halve_patience = halve_patience
        self.stop_patience = stop_patience
        self.tol = tol
        self.best = math.inf
        self.since_best = 0
        self.since_halving = 0
        self.halvings = 0

    def update(self, val_loss: float) -> Tuple[bool, bool]:
        """Feed one epoch's validation loss; returns ``(improved, stop)``."""
        if val_loss < self.best - self.tol:
            self.best = val_loss
            self.since_best = self.since_halving = 0
            return True, False
        self.since_best += 1
        self.since_halving += 1
        if self.since_halving >= self.halve_patience:
            self.lr *= 0.5
            self.halvings += 1
            self.since_halving = 0
        return False, self.since_best >= self.stop_patience


def _groups(idx: Sequence[int], lengths: Sequence[int], size: int):
    """Chunks of at most ``size`` indices sharing one signal length, order preserved per length."""
    by_len = {}
    for i in idx:
        by_len.setdefault(lengths[i], []).append(i)
    for members in by_len.values():
        for k in range(0, len(members), size):
            yield members[k : k + size]


def batch_loss_and_grads(
    params: ModelParams,
    noisy: Sequence[np.ndarray],
    clean: Sequence[np.ndarray],
    rngs: Optional[Sequence[np.random.Generator]] = None,
    micro_batch: int = 8,
    training: bool = True,
):
    """Mean negative SNR over a batch and its parameter gradients.

    Samples whose reference is silent are skipped. Micro-batches are summed
    before normalizing, so results do not depend on ``micro_batch``.
    Returns ``(loss, grads, n_used)``; ``loss`` is NaN if every target was silent.
    """
    lengths = [len(x) for x in noisy]
    total = None
    loss_sum, used = 0.0, 0
    for group in _groups(range(len(noisy)), lengths, micro_batch):
        x = np.stack([noisy[i] for i in group])
        group_rngs = [rngs[i] for i in group] if (training and rngs is not None) else None
        out, cache = forward_sequence(params, x, training=training, rng=group_rngs, return_cache=True)
        g_out = np.zeros_like(out)
        for row, i in enumerate(group):
            ref = clean[i][: out.shape[1]]
            try:
                loss, g = neg_snr_loss_grad(out[row, : len(ref)], ref)
            except SilentTargetError:
                continue
            loss_sum += loss
            g_out[row, : len(ref)] = g
            used += 1
        grads = backward(params, cache, g_out)
        if total is None:
            total = grads
        else:
            for k in total:
                total[k] += grads[k]
    if used == 0:
        return float("nan"), {k: np.zeros_like(v) for k, v in total.items()}, 0
    return loss_sum / used, {k: v / used for k, v in total.items()}, used


def validation_loss(params: ModelParams, noisy, clean, micro_batch: int = 8) -> float:
    """Mean negative SNR in inference mode (no dropout)."""
    lengths = [len(x) for x in noisy]
    losses = []
    for group in _groups(range(len(noisy)), lengths, micro_batch):
        out = forward_sequence(params, np.stack([noisy[i] for i in group]))
        for row, i in enumerate(group):
            ref = clean[i][: out.shape[1]]
            try:
                losses.append(neg_snr_loss_grad(out[row, : len(ref)], ref)[0])
            except SilentTargetError:
                pass
    return float(np.mean(losses)) if losses else float("nan")


def fit(
    config: TrainConfig,
    train_pairs: Tuple[Sequence[np.ndarray], Sequence[np.ndarray]],
    val_pairs: Optional[Tuple[Sequence[np.ndarray], Sequence[np.ndarray]]] = None,
    params: Optional[ModelParams] = None,
    checkpoint_dir=None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> Tuple[ModelParams, TrainLog]:
    """Train on in-memory pairs; returns the best-validation parameters and the log.

    Without ``val_pairs`` the training pairs double as validation set.
    """
    noisy, clean = train_pairs
    if not noisy:
        raise ValueError("no training data")
    if val_pairs is None or not val_pairs[0]:
        log.warning("no validation split; validating on the training pairs")
        val_pairs = train_pairs
    params = build_model(config.topology, config.seed) if params is None else params.astype(np.float64)
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        (ckpt_dir / LOG_NAME).write_text("epoch,train_loss,val_loss,lr,wall_time\n")

    shuffle_rng = np.random.default_rng([config.seed, 1])
    sched = PlateauSchedule(config.lr, config.lr_halve_patience, config.early_stop_patience)
    moments = nn.adam_init(params.tensors)
    step = 0
    best = params.copy()
    train_log = TrainLog()
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        lr = sched.lr
        order = shuffle_rng.permutation(len(noisy))
        losses = []
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start : start + config.batch_size]
            rngs = [np.random.default_rng([config.seed, 2, epoch, int(i)]) for i in idx]
            loss, grads, used = batch_loss_and_grads(
                params, [noisy[i] for i in idx], [clean[i] for i in idx], rngs, config.micro_batch
            )
            if used == 0:
                train_log.silent_targets += len(idx)
                continue
            train_log.silent_targets += len(idx) - used
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}")
            grads, _ = nn.clip_grad_norm(grads, config.clip_norm)
            step += 1
            new, moments = nn.adam_step(params.tensors, grads, moments, step, lr)
            params = ModelParams(params.spec, type(params.tensors)(new))
            losses.append(loss)
        train_loss = float(np.mean(losses)) if losses else float("nan")
        val = validation_loss(params, *val_pairs, micro_batch=config.micro_batch)
        if not np.isfinite(val):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        improved, stop = sched.update(val)
        rec = EpochRecord(epoch, train_loss, val, lr, time.perf_counter() - t0)
        train_log.epochs.append(rec)
        if improved:
            best = params.copy()
            train_log.best_epoch = epoch
            if ckpt_dir is not None:
                save_weights(best, ckpt_dir / CHECKPOINT_NAME)
        if ckpt_dir is not None:
            with open(ckpt_dir / LOG_NAME, "a", newline="") as fh:
                csv.writer(fh).writerow([epoch, f"{train_loss:.6f}", f"{val:.6f}", f"{lr:.8g}", f"{rec.wall_time:.3f}"])
        log.info("epoch %d train %.3f val %.3f lr %.2e (%.1fs)", epoch, train_loss, val, lr, rec.wall_time)
        if on_epoch is not None:
            on_epoch(rec)
        if stop:
            log.info("early stop after epoch %d (best epoch %d)", epoch, train_log.best_epoch)
            break
    return best, train_log


def train(config: TrainConfig) -> Tuple[ModelParams, TrainLog]:
    """Train from a dataset manifest, checkpointing into ``config.checkpoint_dir``."""
    manifest = DatasetManifest.read(config.manifest)
    tr_noisy, tr_clean, skipped_tr = load_pairs(manifest.split("train"))
    va_noisy, va_clean, skipped_va = load_pairs(manifest.split("val"))
    if not tr_noisy:
        raise ValueError(f"{config.manifest}: no readable training pairs")
    best, train_log = fit(config, (tr_noisy, tr_clean), (va_noisy, va_clean), checkpoint_dir=config.checkpoint_dir)
    train_log.skipped_files = skipped_tr + skipped_va
    if train_log.skipped_files:
        log.warning("%d unreadable files skipped", train_log.skipped_files)
    return best, train_log


def evaluate(params, manifest, out_csv=None, split: str = "val", mode: str = "sequence") -> MetricReport:
    """SI-SDR and STOI of enhanced and unprocessed mixtures against the clean references.

    ``params`` may be :class:`ModelParams` or any callable mapping a noisy
    array to an enhanced array of the same length.
    """
    if not isinstance(manifest, DatasetManifest):
        manifest = DatasetManifest.read(manifest)
    entries = manifest.split(split) if split else manifest.entries
    if callable(params):
        enhancer = params
    else:
        enhancer = lambda x: enhance(params, x, mode)  # noqa: E731
    report = MetricReport()
    for e in entries:
        if not (Path(e.mixture).exists() and Path(e.reference).exists()):
            log.warning("missing %s or %s", e.mixture, e.reference)
            report.missing.append(str(e.mixture))
            continue
        noisy, clean, _ = load_pairs([e])
        if not noisy:
            report.missing.append(str(e.mixture))
            continue
        x, ref = noisy[0], clean[0]
        y = np.asarray(enhancer(x), dtype=np.float64)
        report.add(Path(e.mixture).name, si_sdr(y, ref), stoi(y, ref), si_sdr(x, ref), stoi(x, ref))
    if out_csv is not None:
        report.write_csv(out_csv)
    return report

"""Numeric layers with hand-written backward passes, init and optimizer.

Shapes follow the batch-first convention ``(B, T, D)`` for sequences.
Gate order inside every LSTM weight block is (input, forget, cell, output).
"""
from __future__ import annotations

from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np
from scipy.special import expit as sigmoid

ILN_EPS = 1e-7


class LstmParams(NamedTuple):
    W: np.ndarray  # (4H, D)
    R: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)


class LstmState(NamedTuple):
    h: np.ndarray
    c: np.ndarray


class LstmCache(NamedTuple):
    x: np.ndarray  # (B, T, D)
    gates: np.ndarray  # activated (B, T, 4H)
    c: np.ndarray  # (B, T, H)
    tanh_c: np.ndarray
    h: np.ndarray
    h0: np.ndarray
    c0: np.ndarray


def zero_state(hidden: int, batch: Tuple[int, ...] = (), dtype=np.float64) -> LstmState:
    return LstmState(np.zeros(batch + (hidden,), dtype), np.zeros(batch + (hidden,), dtype))


def _activate(z: np.ndarray, hidden: int) -> np.ndarray:
    a = sigmoid(z)
    cell = slice(2 * hidden, 3 * hidden)
    a[..., cell] = np.tanh(z[..., cell])
    return a


def lstm_step(params: LstmParams, x: np.ndarray, state: LstmState) -> Tuple[np.ndarray, LstmState]:
    """One recurrence step; ``x`` may carry leading batch axes."""
    if np.any(np.isnan(x)):
        raise ValueError("NaN in LSTM input")
    hidden = params.R.shape[1]
    z = x @ params.W.T + state.h @ params.R.T + params.b
    a = _activate(z, hidden)
    i, f, g, o = (a[..., k * hidden : (k + 1) * hidden] for k in range(4))
    c = f * state.c + i * g
    h = o * np.tanh(c)
    return h, LstmState(h, c)


def lstm_forward(
    params: LstmParams, x: np.ndarray, state: Optional[LstmState] = None
) -> Tuple[np.ndarray, LstmCache]:
    """Run a whole ``(B, T, D)`` sequence; returns hidden states ``(B, T, H)``.

    Input projections for all steps are done in one matmul; only the
    recurrent product stays inside the time loop.
    """
    if np.any(np.isnan(x)):
        raise ValueError("NaN in LSTM input")
    batch, steps, _ = x.shape
    hidden = params.R.shape[1]
    if state is None:
        state = zero_state(hidden, (batch,), x.dtype)
    gates = x @ params.W.T
    gates += params.b
    cs = np.empty((batch, steps, hidden), x.dtype)
    hs = np.empty_like(cs)
    tcs = np.empty_like(cs)
    h, c = state
    RT = params.R.T
    H = hidden
    for t in range(steps):
        z = gates[:, t]
        z += h @ RT
        a = sigmoid(z)
        a[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
        gates[:, t] = a
        c = a[:, H : 2 * H] * c + a[:, :H] * a[:, 2 * H : 3 * H]
        tc = np.tanh(c)
        h = a[:, 3 * H :] * tc
        cs[:, t] = c
        tcs[:, t] = tc
        hs[:, t] = h
    return hs, LstmCache(x, gates, cs, tcs, hs, state.h, state.c)


def lstm_backward(params: LstmParams, cache: LstmCache, dh_seq: np.ndarray):
    """Backpropagation through time over the cached sequence.

    Returns ``(LstmParams of gradients, dx)``.
    """
    if dh_seq.shape != cache.h.shape:
        raise ValueError(f"upstream gradient shape {dh_seq.shape} does not match cache {cache.h.shape}")
    batch, steps, H = cache.h.shape
    dz = np.empty_like(cache.gates)
    dh_next = np.zeros((batch, H), dh_seq.dtype)
    dc_next = np.zeros((batch, H), dh_seq.dtype)
    R = params.R
    for t in range(steps - 1, -1, -1):
        a = cache.gates[:, t]
        i, f, g, o = a[:, :H], a[:, H : 2 * H], a[:, 2 * H : 3 * H], a[:, 3 * H :]
        tc = cache.tanh_c[:, t]
        c_prev = cache.c[:, t - 1] if t > 0 else cache.c0
        dh = dh_seq[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        d = dz[:, t]
        d[:, :H] = dc * g * i * (1.0 - i)
        d[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
        d[:, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
        d[:, 3 * H :] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = d @ R
    flat = dz.reshape(-1, 4 * H)
    dW = flat.T @ cache.x.reshape(-1, cache.x.shape[-1])
    h_prev = np.concatenate([cache.h0[:, None, :], cache.h[:, :-1]], axis=1)
    dR = flat.T @ h_prev.reshape(-1, H)
    db = flat.sum(axis=0)
    dx = dz @ params.W
    return LstmParams(dW, dR, db), dx


def dense_forward(W: np.ndarray, b: np.ndarray, x: np.ndarray, activation: Optional[str] = "sigmoid"):
    if x.shape[-1] != W.shape[1]:
        raise ValueError(f"dense input width {x.shape[-1]} != weight columns {W.shape[1]}")
    y = x @ W.T + b
    if activation == "sigmoid":
        y = sigmoid(y)
    elif activation is not None:
        raise ValueError(f"unknown activation {activation!r}")
    return y


def dense_backward(W: np.ndarray, x: np.ndarray, y: np.ndarray, dy: np.ndarray, activation: Optional[str] = "sigmoid"):
    """Gradients ``(dW, db, dx)`` given the forward output ``y``."""
    dz = dy * y * (1.0 - y) if activation == "sigmoid" else dy
    flat = dz.reshape(-1, dz.shape[-1])
    dW = flat.T @ x.reshape(-1, x.shape[-1])
    return dW, flat.sum(axis=0), dz @ W


def instant_layer_norm(gamma: np.ndarray, beta: np.ndarray, x: np.ndarray, eps: float = ILN_EPS):
    """Normalize every frame over its feature axis; no statistics over time.

    Returns ``(y, (xhat, inv_std))``.
    """
    mean = x.mean(axis=-1, keepdims=True)
    xc = x - mean
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    return gamma * xhat + beta, (xhat, inv_std)


def instant_layer_norm_backward(gamma: np.ndarray, cache, dy: np.ndarray):
    xhat, inv_std = cache
    lead = tuple(range(dy.ndim - 1))
    dgamma = np.sum(dy * xhat, axis=lead)
    dbeta = np.sum(dy, axis=lead)
    dxhat = dy * gamma
    dx = inv_std * (
        dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True)
    )
    return dgamma, dbeta, dx


def dropout(x: np.ndarray, rate: float, training: bool, rng: Optional[np.random.Generator] = None):
    """Inverted dropout. Returns ``(y, scale_mask)``; the mask is None at inference.

    ``rng`` is a Generator, or a list with one Generator per leading-axis row.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if not training or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    if isinstance(rng, (list, tuple)):
        # one generator per batch row keeps masks independent of batch grouping
        draws = np.stack([r.random(x.shape[1:]) for r in rng])
    else:
        draws = rng.random(x.shape)
    keep = (draws >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep, keep


def glorot_uniform(shape: Tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    fan_out, fan_in = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


Grads = Dict[str, np.ndarray]


def global_norm(grads: Grads) -> float:
    return float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))


def clip_grad_norm(grads: Grads, max_norm: float = 3.0) -> Tuple[Grads, float]:
    """Rescale all gradients jointly so their global L2 norm is at most ``max_norm``.

    Returns the clipped gradients and the norm before clipping.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient in {name}")
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads), norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


class AdamMoments(NamedTuple):
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]


def adam_init(params: Dict[str, np.ndarray]) -> AdamMoments:
    return AdamMoments({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(
    params: Dict[str, np.ndarray],
    grads: Grads,
    moments: AdamMoments,
    t: int,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> Tuple[Dict[str, np.ndarray], AdamMoments]:
    """Bias-corrected Adam update at step ``t`` (1-based). Inputs are not modified."""
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    new_p, new_m, new_v = {}, {}, {}
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for k, p in params.items():
        g = grads[k]
        m = beta1 * moments.m[k] + (1.0 - beta1) * g
        v = beta2 * moments.v[k] + (1.0 - beta2) * g * g
        new_p[k] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamMoments(new_m, new_v)

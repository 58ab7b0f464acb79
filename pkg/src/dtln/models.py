"""Stacked mask-estimation networks: the dual-transform model and baselines B1-B4.

A model is a chain of separation cores. Each core maps time frames to time
frames: it transforms the frame (STFT magnitude or a learned analysis
bank), normalizes, runs an LSTM stack, predicts a sigmoid mask and applies
it to the *unnormalized* representation before transforming back. Frames
flow from core to core without overlap-add; overlap-add runs once at the end.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from . import layers as nn
from .transforms import (
    FEATURE_SIZE,
    FRAME_LEN,
    HOP,
    AudioBuffer,
    BasisPair,
    analysis_basis,
    apply_feature_mask,
    apply_spectral_mask,
    frame_signal,
    irfft_backward,
    mag_phase,
    overlap_add,
    overlap_add_backward,
    rfft,
    rfft_backward,
    synthesis_basis,
)

LOG_EPS = 1e-7
DROPOUT_RATE = 0.25


@dataclass(frozen=True)
class TopologySpec:
    name: str
    cores: Tuple[Tuple[str, int], ...]  # (basis, number of LSTM layers) per core
    lstm_units: int
    feature_size: int = FEATURE_SIZE
    frame_len: int = FRAME_LEN
    hop: int = HOP
    dropout: float = DROPOUT_RATE

    @property
    def stacked(self) -> bool:
        return len(self.cores) > 1

    @property
    def core1_basis(self) -> str:
        return self.cores[0][0]

    @property
    def core2_basis(self) -> str:
        return self.cores[1][0] if self.stacked else "none"

    @property
    def n_lstm(self) -> int:
        return sum(n for _, n in self.cores)

    def core_width(self, core: int) -> int:
        """Size of the representation the core masks (bins or features)."""
        return self.frame_len // 2 + 1 if self.cores[core][0] == "stft" else self.feature_size


TOPOLOGIES: Dict[str, TopologySpec] = {
    "DTLN": TopologySpec("DTLN", (("stft", 2), ("learned", 2)), 128),
    "B1": TopologySpec("B1", (("stft", 4),), 166),
    "B2": TopologySpec("B2", (("learned", 4),), 139),
    "B3": TopologySpec("B3", (("stft", 2), ("stft", 2)), 156),
    "B4": TopologySpec("B4", (("learned", 2), ("learned", 2)), 95),
}


def get_topology(name: str) -> TopologySpec:
    try:
        return TOPOLOGIES[name]
    except KeyError:
        raise ValueError(f"unknown topology {name!r}; expected one of {sorted(TOPOLOGIES)}") from None


def param_shapes(spec: TopologySpec) -> "OrderedDict[str, Tuple[int, ...]]":
    """Ordered tensor names and shapes implied by a topology."""
    shapes: "OrderedDict[str, Tuple[int, ...]]" = OrderedDict()
    H = spec.lstm_units
    for ci, (basis, n_layers) in enumerate(spec.cores):
        width = spec.core_width(ci)
        pre = f"core{ci}"
        if basis == "learned":
            shapes[f"{pre}.analysis.U"] = (spec.feature_size, spec.frame_len)
        shapes[f"{pre}.norm.gamma"] = (width,)
        shapes[f"{pre}.norm.beta"] = (width,)
        d_in = width
        for j in range(n_layers):
            shapes[f"{pre}.lstm{j}.W"] = (4 * H, d_in)
            shapes[f"{pre}.lstm{j}.R"] = (4 * H, H)
            shapes[f"{pre}.lstm{j}.b"] = (4 * H,)
            d_in = H
        shapes[f"{pre}.mask.W"] = (width, H)
        shapes[f"{pre}.mask.b"] = (width,)
        if basis == "learned":
            shapes[f"{pre}.synthesis.V"] = (spec.feature_size, spec.frame_len)
    return shapes


@dataclass
class ModelParams:
    spec: TopologySpec
    tensors: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.spec, OrderedDict((k, v.astype(dtype)) for k, v in self.tensors.items()))

    def copy(self) -> "ModelParams":
        return ModelParams(self.spec, OrderedDict((k, v.copy()) for k, v in self.tensors.items()))

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def lstm(self, core: int, layer: int) -> nn.LstmParams:
        p = f"core{core}.lstm{layer}"
        return nn.LstmParams(self.tensors[p + ".W"], self.tensors[p + ".R"], self.tensors[p + ".b"])

    def basis(self, core: int) -> BasisPair:
        return BasisPair(self.tensors[f"core{core}.analysis.U"], self.tensors[f"core{core}.synthesis.V"])


def build_model(spec, seed: int = 0) -> ModelParams:
    """Initialize a topology: Glorot-uniform weights, zero biases, unit iLN scale."""
    if isinstance(spec, str):
        spec = get_topology(spec)
    rng = np.random.default_rng(seed)
    tensors = OrderedDict()
    for name, shape in param_shapes(spec).items():
        leaf = name.rsplit(".", 1)[1]
        if leaf == "gamma":
            tensors[name] = np.ones(shape)
        elif leaf in ("beta", "b"):
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = nn.glorot_uniform(shape, rng)
    return ModelParams(spec, tensors)


def count_params(params) -> int:
    tensors = params.tensors if isinstance(params, ModelParams) else params
    return int(sum(np.size(t) for t in tensors.values()))


# --------------------------------------------------------------------------
# whole-sequence forward / backward


class _CoreCache(NamedTuple):
    basis: str
    x: np.ndarray
    rep: object  # complex spectrum (stft) or features w (learned)
    magnitude: Optional[np.ndarray]
    norm: tuple
    lstm: List[nn.LstmCache]
    drop: List[Optional[np.ndarray]]
    h: np.ndarray
    mask: np.ndarray
    masked: Optional[np.ndarray]


class ForwardCache(NamedTuple):
    cores: List[_CoreCache]
    n_frames: int


def _lstm_stack(params, ci, n_layers, x, training, rng, rate):
    caches, drops = [], []
    h = x
    for j in range(n_layers):
        if j > 0:
            h, keep = nn.dropout(h, rate, training, rng)
            drops.append(keep)
        h, cache = nn.lstm_forward(params.lstm(ci, j), h)
        caches.append(cache)
    return h, caches, drops


def _core_forward(params: ModelParams, ci: int, x: np.ndarray, training: bool, rng) -> Tuple[np.ndarray, _CoreCache]:
    basis, n_layers = params.spec.cores[ci]
    gamma, beta = params[f"core{ci}.norm.gamma"], params[f"core{ci}.norm.beta"]
    if basis == "stft":
        spec = rfft(x)
        mp = mag_phase(spec)
        feats = np.log(mp.magnitude + LOG_EPS)
        rep, magnitude = spec, mp.magnitude
    else:
        bank = params.basis(ci)
        rep = analysis_basis(x, bank)
        feats, magnitude = rep, None
    normed, norm_cache = nn.instant_layer_norm(gamma, beta, feats)
    h, lstm_caches, drops = _lstm_stack(params, ci, n_layers, normed, training, rng, params.spec.dropout)
    mask = nn.dense_forward(params[f"core{ci}.mask.W"], params[f"core{ci}.mask.b"], h)
    if basis == "stft":
        out = apply_spectral_mask(mp, mask, params.spec.frame_len)
        masked = None
    else:
        masked = apply_feature_mask(rep, mask)
        out = synthesis_basis(masked, bank)
    return out, _CoreCache(basis, x, rep, magnitude, norm_cache, lstm_caches, drops, h, mask, masked)


def _core_backward(params: ModelParams, ci: int, cache: _CoreCache, g_out: np.ndarray, grads: dict, need_dx: bool):
    pre = f"core{ci}"
    if cache.basis == "stft":
        # out = irfft(mask * Y): linear in the mask and in Y.
        g_spec = irfft_backward(g_out)
        g_mask = np.real(g_spec * np.conj(cache.rep))
    else:
        V = params[pre + ".synthesis.V"]
        grads[pre + ".synthesis.V"] = cache.masked.reshape(-1, V.shape[0]).T @ g_out.reshape(-1, V.shape[1])
        g_d = g_out @ V.T
        g_mask = g_d * cache.rep

    dW, db, dh = nn.dense_backward(params[pre + ".mask.W"], cache.h, cache.mask, g_mask)
    grads[pre + ".mask.W"], grads[pre + ".mask.b"] = dW, db
    for j in range(len(cache.lstm) - 1, -1, -1):
        g_lstm, dh = nn.lstm_backward(params.lstm(ci, j), cache.lstm[j], dh)
        grads[f"{pre}.lstm{j}.W"], grads[f"{pre}.lstm{j}.R"], grads[f"{pre}.lstm{j}.b"] = g_lstm
        if j > 0 and cache.drop[j - 1] is not None:
            dh = dh * cache.drop[j - 1]
    dgamma, dbeta, g_feats = nn.instant_layer_norm_backward(params[pre + ".norm.gamma"], cache.norm, dh)
    grads[pre + ".norm.gamma"], grads[pre + ".norm.beta"] = dgamma, dbeta

    if cache.basis == "stft":
        if not need_dx:
            return None
        mag = cache.magnitude
        g_mag = g_feats / (mag + LOG_EPS)
        unit = np.divide(cache.rep, mag, out=np.zeros_like(cache.rep), where=mag > 0)
        g_Y = g_spec * cache.mask + g_mag * unit
        return rfft_backward(g_Y, params.spec.frame_len)
    U = params[pre + ".analysis.U"]
    g_w = g_d * cache.mask + g_feats
    grads[pre + ".analysis.U"] = g_w.reshape(-1, U.shape[0]).T @ cache.x.reshape(-1, U.shape[1])
    return g_w @ U if need_dx else None


def _as_array(noisy) -> np.ndarray:
    x = noisy.samples if isinstance(noisy, AudioBuffer) else np.asarray(noisy)
    if not np.all(np.isfinite(x)):
        raise ValueError("NaN or Inf in input audio")
    return x


def forward_sequence(
    params: ModelParams,
    noisy,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    return_cache: bool = False,
):
    """Enhance a whole signal (or a ``(B, n)`` batch) in one pass.

    Output length is ``(K - 1) * hop + L`` for ``K`` complete frames. The
    computation runs in ``params.dtype``; pass 32-bit params for fast
    inference. With ``return_cache`` a :class:`ForwardCache` for
    :func:`backward` is returned as well.
    """
    x = _as_array(noisy).astype(params.dtype, copy=False)
    spec = params.spec
    frames = frame_signal(x, spec.frame_len, spec.hop)
    squeeze = frames.ndim == 2
    if squeeze:
        frames = frames[None]
    caches = []
    for ci in range(len(spec.cores)):
        frames, cache = _core_forward(params, ci, frames, training, rng)
        caches.append(cache)
    out = overlap_add(frames, spec.hop)
    if squeeze:
        out = out[0]
    if return_cache:
        return out, ForwardCache(caches, frames.shape[1])
    return out


def backward(params: ModelParams, cache: ForwardCache, grad_out: np.ndarray) -> Dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter, given ``dloss/doutput``."""
    spec = params.spec
    g = np.asarray(grad_out)
    squeeze = g.ndim == 1
    if squeeze:
        g = g[None]
    expected = (cache.n_frames - 1) * spec.hop + spec.frame_len
    if g.shape[-1] != expected:
        raise ValueError(f"gradient length {g.shape[-1]} does not match cached output length {expected}")
    g = overlap_add_backward(g, spec.frame_len, spec.hop)
    grads: Dict[str, np.ndarray] = {}
    for ci in range(len(spec.cores) - 1, -1, -1):
        g = _core_backward(params, ci, cache.cores[ci], g, grads, need_dx=ci > 0)
    return OrderedDict((k, grads[k]) for k in params.tensors)


def core_masks(cache: ForwardCache) -> List[np.ndarray]:
    return [c.mask for c in cache.cores]


# --------------------------------------------------------------------------
# streaming


class StreamState(NamedTuple):
    lstm: Tuple[nn.LstmState, ...]
    tail: np.ndarray  # pending overlap-add samples, length L - hop


def init_stream_state(params: ModelParams) -> StreamState:
    spec = params.spec
    states = tuple(nn.zero_state(spec.lstm_units, dtype=params.dtype) for _ in range(spec.n_lstm))
    return StreamState(states, np.zeros(spec.frame_len - spec.hop, params.dtype))


def step_frame(params: ModelParams, state: StreamState, frame: np.ndarray) -> Tuple[np.ndarray, StreamState]:
    """Process one frame of ``L`` input samples and emit the next ``hop`` output samples.

    The returned state is new; ``state`` itself is left untouched.
    """
    spec = params.spec
    if len(state.lstm) != spec.n_lstm or state.tail.shape != (spec.frame_len - spec.hop,):
        raise ValueError("stream state does not belong to this model")
    x = np.asarray(frame, dtype=params.dtype)
    if x.shape != (spec.frame_len,):
        raise ValueError(f"frame must have {spec.frame_len} samples, got {x.shape}")
    new_states = []
    k = 0
    for ci, (basis, n_layers) in enumerate(spec.cores):
        pre = f"core{ci}"
        if basis == "stft":
            mp = mag_phase(rfft(x))
            feats = np.log(mp.magnitude + LOG_EPS)
        else:
            bank = params.basis(ci)
            feats = analysis_basis(x, bank)
        h, _ = nn.instant_layer_norm(params[pre + ".norm.gamma"], params[pre + ".norm.beta"], feats)
        for j in range(n_layers):
            h, st = nn.lstm_step(params.lstm(ci, j), h, state.lstm[k])
            new_states.append(st)
            k += 1
        mask = nn.dense_forward(params[pre + ".mask.W"], params[pre + ".mask.b"], h)
        if basis == "stft":
            x = apply_spectral_mask(mp, mask, spec.frame_len).astype(params.dtype, copy=False)
        else:
            x = synthesis_basis(apply_feature_mask(feats, mask), bank)
    buf = np.concatenate([state.tail, np.zeros(spec.hop, params.dtype)])
    buf += x * (spec.hop / spec.frame_len)
    return buf[: spec.hop].copy(), StreamState(tuple(new_states), buf[spec.hop :].copy())


def stream_signal(params: ModelParams, noisy) -> np.ndarray:
    """Feed a signal through :func:`step_frame` frame by frame; returns ``K * hop`` samples."""
    spec = params.spec
    x = _as_array(noisy).astype(params.dtype, copy=False)
    state = init_stream_state(params)
    frames = frame_signal(x, spec.frame_len, spec.hop)
    out = np.empty(len(frames) * spec.hop, params.dtype)
    for k, frame in enumerate(frames):
        out[k * spec.hop : (k + 1) * spec.hop], state = step_frame(params, state, frame)
    return out


def pad_for_framing(x: np.ndarray, frame_len: int = FRAME_LEN, hop: int = HOP) -> Tuple[np.ndarray, int]:
    """Zero-pad so every input sample gets full overlap and the frame grid ends exactly.

    Returns the padded signal and the offset of the first input sample.
    """
    lead = frame_len - hop
    n = len(x) + 2 * lead
    n = max(n, frame_len)
    n += (-(n - frame_len)) % hop
    out = np.zeros(n, dtype=x.dtype)
    out[lead : lead + len(x)] = x
    return out, lead


def enhance(params: ModelParams, noisy, mode: str = "sequence") -> np.ndarray:
    """Denoise a signal of any length; output has exactly the input length."""
    x = _as_array(noisy)
    padded, lead = pad_for_framing(x, params.spec.frame_len, params.spec.hop)
    if mode == "sequence":
        out = forward_sequence(params, padded)
    elif mode == "stream":
        out = stream_signal(params, padded)
    else:
        raise ValueError(f"mode must be 'sequence' or 'stream', got {mode!r}")
    return out[lead : lead + len(x)]

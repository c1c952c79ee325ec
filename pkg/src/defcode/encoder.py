"""Two-phase feedback encoder: systematic phase, then recurrent parity generation.

Phase 1 sends the power-scaled systematic symbols and records the echoed
noise estimate ``n0_hat = x_tilde - x_tx``. Phase 2 runs the parity symbol
generator (PSG) for ``k = 0..K-1``; its input at step ``k`` is

    [x(k); n0(k-d0..k); r_0(k-d1..k-1); ...; r_{P-1}(k-dP..k-1)]

where ``r_l(j)`` is the noise estimate on parity ``l`` of step ``j``. Indices
below zero read as 0. The PSG state is mapped to ``P`` raw parities by
``A h + c`` and normalized per stream.

Because every PSG input is either a message symbol or an exogenous noise
estimate, the training path can draw all noise up front and run the PSG over
the whole sequence at once; :func:`encode_interactive` is the physically
ordered version used for inference.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import cells
from .channel import Channel
from .config import CodeConfig
from .errors import ConfigurationError, UsageError
from .modulation import constellation_energy, modulate
from .numerics import (
    NORM_EPS,
    RunningMoments,
    apply_normalization,
    batch_normalize,
    batch_normalize_backward,
    init_uniform,
    make_rng,
)


@dataclass
class CalibStats:
    """Per parity stream (or per (k, stream)) statistics of raw PSG outputs."""

    mean: np.ndarray
    var: np.ndarray
    count: int
    degenerate: list[int] = field(default_factory=list)  # flat indices where the var guard engaged

    def copy(self) -> "CalibStats":
        return CalibStats(self.mean.copy(), self.var.copy(), self.count, list(self.degenerate))


@dataclass
class EncoderModel:
    kind: str
    cell: dict[str, np.ndarray]
    A: np.ndarray   # (P, H0)
    c: np.ndarray   # (P,)
    w: np.ndarray   # (P+1,) codeword power levels
    a: np.ndarray   # (K,)   symbol power levels
    calib: CalibStats | None = None

    @property
    def P(self) -> int:
        return self.A.shape[0]

    @property
    def H(self) -> int:
        return self.A.shape[1]

    def parameters(self) -> dict[str, np.ndarray]:
        p = {f"cell.{k}": v for k, v in self.cell.items()}
        p.update(A=self.A, c=self.c, w=self.w, a=self.a)
        return p

    def with_parameters(self, params, calib=None) -> "EncoderModel":
        cell = {k[5:]: np.array(v) for k, v in params.items() if k.startswith("cell.")}
        return EncoderModel(self.kind, cell, np.array(params["A"]), np.array(params["c"]),
                            np.array(params["w"]), np.array(params["a"]), calib)

    def copy(self) -> "EncoderModel":
        return self.with_parameters(self.parameters(), None if self.calib is None else self.calib.copy())


def init_encoder(cfg: CodeConfig, rng) -> EncoderModel:
    H, P, K = cfg.H0, cfg.P, cfg.K
    cell = cells.init_cell(cfg.encoder_cell, H, cfg.encoder_input_size, rng)
    return EncoderModel(
        cfg.encoder_cell, cell,
        A=init_uniform(rng, (P, H)),
        c=init_uniform(rng, (P,), fan_in=H),
        w=np.ones(P + 1),
        a=np.ones(K),
    )


def pad_message(info_bits, pad_bits: int = 1) -> np.ndarray:
    """Append ``pad_bits`` zeros at the end of each message."""
    info_bits = np.asarray(info_bits)
    pad = np.zeros(info_bits.shape[:-1] + (pad_bits,), dtype=info_bits.dtype)
    return np.concatenate([info_bits, pad], axis=-1)


def project_power(w: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rescale so that sum(w^2) = P+1 and sum(a^2) = K."""
    w = w * math.sqrt(w.size / float(np.sum(w * w)))
    a = a * math.sqrt(a.size / float(np.sum(a * a)))
    return w, a


# --------------------------------------------------------------------------
# PSG input construction
# --------------------------------------------------------------------------

def _window(buf, lo, hi, available):
    """Entries ``lo..hi`` (inclusive) of the last axis; negative indices read as 0."""
    if hi >= available:
        raise UsageError(f"buffer holds {available} entries but index {hi} is required")
    out = np.zeros(buf.shape[:-1] + (hi - lo + 1,))
    start = max(lo, 0)
    if start <= hi:
        out[..., start - lo:] = buf[..., start:hi + 1]
    return out


def build_psg_input(k: int, x, n0_buffer, r_buffers, deltas) -> np.ndarray:
    """PSG input vector for step ``k``.

    ``x`` and ``n0_buffer`` have time on the last axis; ``r_buffers`` is
    ``(..., n_filled, P)`` holding noise estimates of parity steps
    ``0..n_filled-1``. Only ``r_buffers[..., :k, :]`` is ever read.
    """
    x = np.asarray(x, dtype=np.float64)
    n0_buffer = np.asarray(n0_buffer, dtype=np.float64)
    r_buffers = np.asarray(r_buffers, dtype=np.float64)
    P = len(deltas) - 1
    if r_buffers.shape[-1] != P:
        raise ConfigurationError(f"r_buffers need {P} streams, got {r_buffers.shape[-1]}")
    K = x.shape[-1]
    if not 0 <= k < K:
        raise ConfigurationError(f"step {k} outside 0..{K - 1}")
    parts = [x[..., k:k + 1], _window(n0_buffer, k - deltas[0], k, n0_buffer.shape[-1])]
    for l in range(P):
        parts.append(_window(r_buffers[..., l], k - deltas[l + 1], k - 1, r_buffers.shape[-2]))
    return np.concatenate(parts, axis=-1)


def _lagged(seq, lags):
    """Stack ``seq[..., k - lag]`` (zero for k < lag) along a new last axis; time on axis -1."""
    K = seq.shape[-1]
    out = np.zeros(seq.shape + (len(lags),))
    for j, lag in enumerate(lags):
        if lag < K:
            out[..., lag:, j] = seq[..., :K - lag]
    return out


def build_psg_inputs(x, n0_hat, r_hat, deltas) -> np.ndarray:
    """All PSG inputs at once as a time-major ``(K, B, I)`` array.

    ``x``, ``n0_hat``: (B, K); ``r_hat``: (B, K, P). Equivalent to calling
    :func:`build_psg_input` for every ``k``.
    """
    P = len(deltas) - 1
    parts = [x[..., None], _lagged(n0_hat, range(deltas[0], -1, -1))]
    for l in range(P):
        parts.append(_lagged(r_hat[..., l], range(deltas[l + 1], 0, -1)))
    full = np.concatenate(parts, axis=-1)   # (B, K, I)
    return np.ascontiguousarray(full.transpose(1, 0, 2))


# --------------------------------------------------------------------------
# PSG and normalization
# --------------------------------------------------------------------------

def psg_step(model: EncoderModel, i_k, state: cells.CellState):
    """One PSG iteration: ``(new_state, raw parities A h_k + c)``."""
    new_state, _ = cells.cell_forward(model.kind, model.cell, i_k, state)
    raw = new_state.h @ model.A.T + model.c
    return new_state, raw


def _norm_axes(norm_mode):
    return (0, 1) if norm_mode == "stream" else (0,)


def normalize_parity(raw, mode: str, calib: CalibStats | None = None, norm_mode: str = "stream", k=None):
    """Normalize raw parities.

    ``mode="train"``: ``raw`` is (B, K, P) and batch statistics are used;
    returns ``(p, cache)``. ``mode="inference"``: fixed calibration
    statistics; ``raw`` is (B, K, P), or (B, P) for a single step ``k``.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if mode == "train":
        return batch_normalize(raw, _norm_axes(norm_mode))
    if mode != "inference":
        raise ConfigurationError(f"unknown normalization mode {mode!r}")
    if calib is None:
        raise UsageError("inference-mode normalization requires calibration statistics")
    mean, var = calib.mean, calib.var
    if mean.ndim == 2 and k is not None:
        mean, var = mean[k], var[k]
    return apply_normalization(raw, mean, var)


# --------------------------------------------------------------------------
# codeword assembly
# --------------------------------------------------------------------------

def assemble_codeword(x, parities, w, a) -> np.ndarray:
    """Codeword z of length (P+1)K: scaled systematic symbols, then parities.

    ``z[j] = w0 a[j] x[j]`` for ``j < K``; otherwise with ``l = (j-K) % P``
    and ``k = (j-K) // P``, ``z[j] = w[l+1] a[k] p_k[l]``.
    """
    x = np.asarray(x, dtype=np.float64)
    parities = np.asarray(parities, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    sys = w[0] * a * x
    par = w[1:] * a[:, None] * parities
    return np.concatenate([sys, par.reshape(par.shape[:-2] + (-1,))], axis=-1)


def nominal_power(model: EncoderModel, Q: int) -> float:
    """Expected mean z(j)^2 with unit-variance parities and the raw constellation."""
    w2 = model.w * model.w
    a2 = model.a * model.a
    per_k = w2[0] * constellation_energy(Q) + np.sum(w2[1:])
    return float(np.sum(a2) * per_k / (model.a.size * model.w.size))


# --------------------------------------------------------------------------
# transcripts
# --------------------------------------------------------------------------

@dataclass
class Transcript:
    """One batch of channel interactions; all arrays have a leading batch axis."""

    x: np.ndarray         # (B, K) systematic symbols before power scaling
    x_tx: np.ndarray
    n0: np.ndarray
    x_bar: np.ndarray
    x_tilde: np.ndarray
    n0_hat: np.ndarray
    raw: np.ndarray       # (B, K, P) PSG outputs before normalization
    p: np.ndarray         # normalized parities
    p_tx: np.ndarray
    v: np.ndarray
    p_bar: np.ndarray
    p_tilde: np.ndarray
    r_hat: np.ndarray
    w: np.ndarray
    a: np.ndarray
    psg_inputs: np.ndarray | None = None   # (K, B, I)

    @property
    def g0(self):
        return self.x_tilde - self.x_bar

    @property
    def g(self):
        return self.p_tilde - self.p_bar

    @property
    def z(self) -> np.ndarray:
        return assemble_codeword(self.x, self.p, self.w, self.a)

    def energy(self) -> float:
        """Sum of z(j)^2 over the batch."""
        return float(np.sum(self.x_tx ** 2) + np.sum(self.p_tx ** 2))


def encode_interactive(model: EncoderModel, cfg: CodeConfig, message, channel: Channel, rng) -> Transcript:
    """Inference-mode encoding with one channel use per iteration.

    ``message`` is (L,) or (B, L) padded bits; normalization uses the
    model's calibration statistics.
    """
    if model.calib is None:
        raise UsageError("encoder must be calibrated before inference-mode encoding")
    message = np.atleast_2d(message)
    B = message.shape[0]
    K, P = cfg.K, cfg.P
    x = modulate(message, cfg.Q)
    x_tx = model.w[0] * model.a * x
    x_bar, n0, x_tilde = channel.transmit(x_tx, rng)
    n0_hat = x_tilde - x_tx
    state = cells.CellState.zeros(model.kind, model.H, B)
    raw = np.empty((B, K, P))
    p = np.empty((B, K, P))
    p_tx = np.empty((B, K, P))
    p_bar = np.empty((B, K, P))
    p_tilde = np.empty((B, K, P))
    v = np.empty((B, K, P))
    r_hat = np.zeros((B, K, P))
    inputs = np.empty((K, B, cfg.encoder_input_size))
    wl = model.w[1:]
    for k in range(K):
        i_k = build_psg_input(k, x, n0_hat, r_hat[:, :k], cfg.deltas)
        inputs[k] = i_k
        state, raw[:, k] = psg_step(model, i_k, state)
        p[:, k] = normalize_parity(raw[:, k], "inference", model.calib, cfg.norm_mode, k=k)
        p_tx[:, k] = wl * model.a[k] * p[:, k]
        p_bar[:, k], v[:, k], p_tilde[:, k] = channel.transmit(p_tx[:, k], rng)
        r_hat[:, k] = p_tilde[:, k] - p_tx[:, k]
    return Transcript(x, x_tx, n0, x_bar, x_tilde, n0_hat, raw, p, p_tx, v, p_bar, p_tilde,
                      r_hat, model.w.copy(), model.a.copy(), inputs)


# --------------------------------------------------------------------------
# training path (batch statistics, differentiable)
# --------------------------------------------------------------------------

@dataclass
class EpisodeNoise:
    n0: np.ndarray   # (B, K)
    g0: np.ndarray
    v: np.ndarray    # (B, K, P)
    g: np.ndarray


def sample_episode_noise(channel: Channel, B: int, K: int, P: int, rng) -> EpisodeNoise:
    """Draw all noise of a batch in the same stream order as :func:`encode_interactive`."""
    n0, g0 = channel.sample_noise((B, K), rng)
    v = np.empty((B, K, P))
    g = np.empty((B, K, P))
    for k in range(K):
        v[:, k], g[:, k] = channel.sample_noise((B, P), rng)
    return EpisodeNoise(n0, g0, v, g)


@dataclass
class EncoderCache:
    x: np.ndarray
    states: np.ndarray
    seq: cells.SequenceCache
    norm: tuple | None
    p: np.ndarray
    raw: np.ndarray


def encoder_forward_train(model: EncoderModel, cfg: CodeConfig, message, noise: EpisodeNoise,
                          norm: str = "train"):
    """Differentiable encoding. Returns ``(x_bar, p_bar, cache)``.

    ``norm="inference"`` swaps batch statistics for the calibration
    statistics (used by calibration and by consistency tests).
    """
    x = modulate(message, cfg.Q)
    n0_hat = noise.n0 + noise.g0
    r_hat = noise.v + noise.g
    inputs = build_psg_inputs(x, n0_hat, r_hat, cfg.deltas)
    states, seq = cells.sequence_forward(model.kind, model.cell, inputs)
    raw = (states @ model.A.T + model.c).transpose(1, 0, 2)   # (B, K, P)
    if norm == "train":
        p, ncache = normalize_parity(raw, "train", norm_mode=cfg.norm_mode)
    else:
        p, ncache = normalize_parity(raw, "inference", model.calib), None
    x_bar = model.w[0] * model.a * x + noise.n0
    p_bar = model.w[1:] * model.a[:, None] * p + noise.v
    return x_bar, p_bar, EncoderCache(x, states, seq, ncache, p, raw)


def encoder_backward_train(model: EncoderModel, cache: EncoderCache, d_x_bar, d_p_bar):
    """Gradients of the encoder parameters given gradients at the receiver."""
    x, p, a, w = cache.x, cache.p, model.a, model.w
    grads = {}
    grads["w"] = np.concatenate([
        [np.sum(d_x_bar * a * x)],
        np.einsum("bkl,k,bkl->l", d_p_bar, a, p),
    ])
    grads["a"] = w[0] * np.sum(d_x_bar * x, axis=0) + np.einsum("bkl,l,bkl->k", d_p_bar, w[1:], p)
    d_p = d_p_bar * w[1:] * a[:, None]
    d_raw = batch_normalize_backward(cache.norm, d_p).transpose(1, 0, 2)   # (K, B, P)
    grads["A"] = np.einsum("kbp,kbh->ph", d_raw, cache.states)
    grads["c"] = d_raw.sum(axis=(0, 1))
    d_states = d_raw @ model.A
    cell_grads, _ = cells.sequence_backward(cache.seq, d_states)
    grads.update({f"cell.{k}": v for k, v in cell_grads.items()})
    return grads


# --------------------------------------------------------------------------
# calibration
# --------------------------------------------------------------------------

def raw_parities(model: EncoderModel, cfg: CodeConfig, message, noise: EpisodeNoise) -> np.ndarray:
    x = modulate(message, cfg.Q)
    inputs = build_psg_inputs(x, noise.n0 + noise.g0, noise.v + noise.g, cfg.deltas)
    states, _ = cells.sequence_forward(model.kind, model.cell, inputs)
    return (states @ model.A.T + model.c).transpose(1, 0, 2)


def random_messages(cfg: CodeConfig, n: int, rng) -> np.ndarray:
    """``n`` padded messages with uniform information bits."""
    info = rng.integers(0, 2, size=(n, cfg.L_info), dtype=np.int8)
    return pad_message(info, cfg.pad_bits)


def calibrate(model: EncoderModel, cfg: CodeConfig, channel: Channel, n_codewords: int, seed: int,
              chunk: int = 10_000) -> CalibStats:
    """Estimate raw-parity statistics over ``n_codewords`` random episodes.

    The PSG never sees normalized parities, so the raw outputs only depend
    on messages and noise. Stores the result in ``model.calib`` and returns it.
    """
    if n_codewords < 1000:
        warnings.warn(f"calibrating over only {n_codewords} codewords", stacklevel=2)
    shape = (cfg.P,) if cfg.norm_mode == "stream" else (cfg.K, cfg.P)
    axes = (0, 1) if cfg.norm_mode == "stream" else (0,)
    moments = RunningMoments(shape)
    for idx, start in enumerate(range(0, n_codewords, chunk)):
        n = min(chunk, n_codewords - start)
        rng = make_rng(seed, idx)
        msg = random_messages(cfg, n, rng)
        noise = sample_episode_noise(channel, n, cfg.K, cfg.P, rng)
        moments.update(raw_parities(model, cfg, msg, noise), axes)
    var = moments.var.copy()
    degenerate = [int(i) for i in np.flatnonzero(var.reshape(-1) <= NORM_EPS)]
    var = np.maximum(var, NORM_EPS)
    stats = CalibStats(moments.mean.copy(), var, moments.count, degenerate)
    model.calib = stats
    return stats

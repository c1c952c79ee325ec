"""Stacked bidirectional recurrent decoder with a sigmoid output layer.

Position ``k`` of the top layer contributes the forward state that has seen
inputs ``0..k`` and the backward state that has seen ``k..K-1``. Both are
normalized element-wise (batch statistics while training, calibrated
statistics at inference) and mapped to ``Q/2`` bit probabilities by
``sigmoid(C [h'; h''] + d)``. Output ``k`` carries message bits
``kQ/2 .. (k+1)Q/2 - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import cells
from .config import CodeConfig
from .errors import ConfigurationError, UsageError
from .numerics import (
    NORM_EPS,
    RunningMoments,
    apply_normalization,
    batch_normalize,
    batch_normalize_backward,
    init_uniform,
    sigmoid,
)


@dataclass
class StateNormStats:
    mean: np.ndarray   # (2H,) forward elements then backward elements
    var: np.ndarray
    count: int

    def copy(self) -> "StateNormStats":
        return StateNormStats(self.mean.copy(), self.var.copy(), self.count)


@dataclass
class DecoderModel:
    kind: str
    layers: list[tuple[dict, dict]]
    C: np.ndarray   # (Q/2, 2H)
    d: np.ndarray   # (Q/2,)
    state_norm: StateNormStats | None = None

    @property
    def H(self) -> int:
        return self.C.shape[1] // 2

    def parameters(self) -> dict[str, np.ndarray]:
        p = {}
        for i, (fw, bw) in enumerate(self.layers):
            p.update({f"layer{i}.fwd.{k}": v for k, v in fw.items()})
            p.update({f"layer{i}.bwd.{k}": v for k, v in bw.items()})
        p.update(C=self.C, d=self.d)
        return p

    def with_parameters(self, params, state_norm=None) -> "DecoderModel":
        layers = []
        for i in range(len(self.layers)):
            fw = {k.split(".", 2)[2]: np.array(v) for k, v in params.items() if k.startswith(f"layer{i}.fwd.")}
            bw = {k.split(".", 2)[2]: np.array(v) for k, v in params.items() if k.startswith(f"layer{i}.bwd.")}
            layers.append((fw, bw))
        return DecoderModel(self.kind, layers, np.array(params["C"]), np.array(params["d"]), state_norm)

    def copy(self) -> "DecoderModel":
        return self.with_parameters(self.parameters(),
                                    None if self.state_norm is None else self.state_norm.copy())


def init_decoder(cfg: CodeConfig, rng) -> DecoderModel:
    H = cfg.H0
    layers = []
    in_size = cfg.decoder_input_size
    for _ in range(cfg.decoder_layers):
        layers.append((cells.init_cell(cfg.decoder_cell, H, in_size, rng),
                       cells.init_cell(cfg.decoder_cell, H, in_size, rng)))
        in_size = 2 * H
    nb = cfg.bits_per_position
    return DecoderModel(cfg.decoder_cell, layers, C=init_uniform(rng, (nb, 2 * H)),
                        d=init_uniform(rng, (nb,), fan_in=2 * H))


# --------------------------------------------------------------------------
# inputs
# --------------------------------------------------------------------------

def build_decoder_input(k: int, x_bar, q_bar, gammas) -> np.ndarray:
    """Decoder input for position ``k``.

    ``x_bar``: (..., K); ``q_bar``: (..., K, P) with ``q_bar[..., j, l]`` the
    ``l``-th received parity of step ``j``.
    """
    x_bar = np.asarray(x_bar, dtype=np.float64)
    q_bar = np.asarray(q_bar, dtype=np.float64)
    P = len(gammas) - 1
    if q_bar.shape[-1] != P:
        raise ConfigurationError(f"need {P} parity streams, got {q_bar.shape[-1]}")
    K = x_bar.shape[-1]
    if not 0 <= k < K:
        raise ConfigurationError(f"position {k} outside 0..{K - 1}")
    streams = [x_bar] + [q_bar[..., l] for l in range(P)]
    parts = []
    for seq, gamma in zip(streams, gammas):
        window = np.zeros(seq.shape[:-1] + (gamma + 1,))
        for j, idx in enumerate(range(k - gamma, k + 1)):
            if idx >= 0:
                window[..., j] = seq[..., idx]
        parts.append(window)
    return np.concatenate(parts, axis=-1)


def build_decoder_inputs(x_bar, p_bar, gammas) -> np.ndarray:
    """All decoder inputs as a time-major ``(K, B, sum(gamma+1))`` array."""
    streams = [x_bar] + [p_bar[..., l] for l in range(p_bar.shape[-1])]
    K = x_bar.shape[-1]
    parts = []
    for seq, gamma in zip(streams, gammas):
        lagged = np.zeros(seq.shape + (gamma + 1,))
        for j, lag in enumerate(range(gamma, -1, -1)):
            if lag < K:
                lagged[..., lag:, j] = seq[..., :K - lag]
        parts.append(lagged)
    return np.ascontiguousarray(np.concatenate(parts, axis=-1).transpose(1, 0, 2))


# --------------------------------------------------------------------------
# forward / backward
# --------------------------------------------------------------------------

@dataclass
class DecoderCache:
    inputs: np.ndarray
    stack: list
    norm: tuple | None
    normed: np.ndarray
    probs: np.ndarray      # (K, B, Q/2)
    gammas: tuple


def top_states(model: DecoderModel, inputs) -> tuple[np.ndarray, list]:
    """Run the stacked network; returns ``(K, B, 2H)`` states and the layer caches."""
    return cells.stack_forward(model.kind, model.layers, inputs)


def _to_bits(per_position: np.ndarray) -> np.ndarray:
    """(K, B, Q/2) -> (B, L)."""
    K, B, nb = per_position.shape
    return per_position.transpose(1, 0, 2).reshape(B, K * nb)


def _from_bits(per_bit: np.ndarray, K: int) -> np.ndarray:
    B, L = per_bit.shape
    return per_bit.reshape(B, K, L // K).transpose(1, 0, 2)


def decode(model: DecoderModel, x_bar, p_bar, gammas, mode: str = "inference"):
    """Bit probabilities ``(B, L)`` from received systematic and parity symbols.

    Returns ``(probs, cache)``. ``mode="train"`` normalizes states with batch
    statistics; ``mode="inference"`` requires :attr:`DecoderModel.state_norm`.
    """
    x_bar = np.atleast_2d(np.asarray(x_bar, dtype=np.float64))
    p_bar = np.asarray(p_bar, dtype=np.float64)
    if p_bar.ndim == 2:
        p_bar = p_bar[None]
    inputs = build_decoder_inputs(x_bar, p_bar, gammas)
    if inputs.shape[-1] != cells.cell_dims(model.kind, model.layers[0][0])[1]:
        raise ConfigurationError("decoder input size does not match the first layer")
    states, stack = top_states(model, inputs)
    if mode == "train":
        normed, ncache = batch_normalize(states, (0, 1))
    elif mode == "inference":
        if model.state_norm is None:
            raise UsageError("decoder must be calibrated before inference-mode decoding")
        normed, ncache = apply_normalization(states, model.state_norm.mean, model.state_norm.var), None
    else:
        raise ConfigurationError(f"unknown decode mode {mode!r}")
    logits = normed @ model.C.T + model.d
    probs = sigmoid(logits)
    K = x_bar.shape[-1]
    if probs.shape[0] * probs.shape[2] != K * model.C.shape[0]:
        raise ConfigurationError("decoder produced an unexpected number of outputs")
    return _to_bits(probs), DecoderCache(inputs, stack, ncache, normed, probs, tuple(gammas))


def decoder_backward(model: DecoderModel, cache: DecoderCache, grad_probs=None, grad_logits=None):
    """Gradients of all decoder parameters and of the received symbols.

    Pass either ``grad_probs`` or ``grad_logits`` (both shaped (B, L)).
    Returns ``(grads, d_x_bar (B, K), d_p_bar (B, K, P))``.
    """
    if not isinstance(cache, DecoderCache):
        raise UsageError("decoder_backward needs the cache returned by decode")
    K = cache.probs.shape[0]
    if grad_logits is None:
        if grad_probs is None:
            raise UsageError("need grad_probs or grad_logits")
        d_logits = _from_bits(np.asarray(grad_probs, dtype=np.float64), K) * cache.probs * (1.0 - cache.probs)
    else:
        d_logits = _from_bits(np.asarray(grad_logits, dtype=np.float64), K)
    if d_logits.shape != cache.probs.shape:
        raise UsageError("gradient shape does not match the cached decode")
    grads = {
        "C": np.einsum("kbq,kbh->qh", d_logits, cache.normed),
        "d": d_logits.sum(axis=(0, 1)),
    }
    d_normed = d_logits @ model.C
    if cache.norm is not None:
        d_states = batch_normalize_backward(cache.norm, d_normed)
    else:
        d_states = d_normed / np.sqrt(model.state_norm.var + NORM_EPS)
    layer_grads, d_inputs = cells.stack_backward(cache.stack, d_states)
    for i, (gf, gb) in enumerate(layer_grads):
        grads.update({f"layer{i}.fwd.{k}": v for k, v in gf.items()})
        grads.update({f"layer{i}.bwd.{k}": v for k, v in gb.items()})
    d_x_bar, d_p_bar = _scatter_inputs(d_inputs, cache.gammas)
    return grads, d_x_bar, d_p_bar


def _scatter_inputs(d_inputs, gammas):
    """Adjoint of :func:`build_decoder_inputs`: (K, B, I) -> (B, K), (B, K, P)."""
    d = d_inputs.transpose(1, 0, 2)   # (B, K, I)
    B, K, _ = d.shape
    out = []
    col = 0
    for gamma in gammas:
        acc = np.zeros((B, K))
        for j, lag in enumerate(range(gamma, -1, -1)):
            if lag < K:
                acc[:, :K - lag] += d[:, lag:, col + j]
        out.append(acc)
        col += gamma + 1
    return out[0], np.stack(out[1:], axis=-1)


def calibrate_states(model: DecoderModel, received, gammas) -> StateNormStats:
    """Element-wise top-layer state statistics over an iterable of ``(x_bar, p_bar)`` batches."""
    moments = RunningMoments((2 * model.H,))
    for x_bar, p_bar in received:
        states, _ = top_states(model, build_decoder_inputs(x_bar, p_bar, gammas))
        moments.update(states, (0, 1))
    if moments.count == 0:
        raise UsageError("no codewords supplied for decoder calibration")
    stats = StateNormStats(moments.mean.copy(), np.maximum(moments.var, NORM_EPS), moments.count)
    model.state_norm = stats
    return stats

"""RNN, GRU and LSTM cells with analytic backward passes, plus bidirectional
and stacked wrappers.

Weights are named dicts following the usual notation:

* RNN:  ``W`` (H x H), ``Y`` (H x I), ``b``
  ``h = tanh(W h_prev + Y i + b)``
* GRU:  ``W_f, W_z, W_r`` / ``Y_f, Y_z, Y_r`` / ``b_h, b_i, b_z, b_r``
  ``z = sig(W_z h_prev + Y_z i + b_z)``, ``r = sig(W_r h_prev + Y_r i + b_r)``,
  ``n = tanh((W_f h_prev + b_h) * r + Y_f i + b_i)``,
  ``h = n * (1 - z) + h_prev * z``
* LSTM: ``W1..W4`` / ``Y1..Y4`` / ``b1..b4`` where gates 1-3 are sigmoids
  (output, forget, input) and 4 is the tanh candidate;
  ``s = f2 * s_prev + f3 * f4``, ``h = f1 * tanh(s)``

All arrays carry a leading batch axis ``(B, ...)``; the single-step functions
also accept unbatched vectors. Sequences are time-major ``(T, B, I)``.

Internally the gate matrices are stacked so one matmul serves every gate;
:func:`_step` and :func:`_step_back` are the only places the cell equations
live.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, UsageError
from .numerics import init_uniform, sigmoid

_W_NAMES = {"rnn": ("W",), "gru": ("W_f", "W_z", "W_r"), "lstm": ("W1", "W2", "W3", "W4")}
_Y_NAMES = {"rnn": ("Y",), "gru": ("Y_f", "Y_z", "Y_r"), "lstm": ("Y1", "Y2", "Y3", "Y4")}
_B_NAMES = {"rnn": ("b",), "gru": ("b_i", "b_z", "b_r"), "lstm": ("b1", "b2", "b3", "b4")}


def _check_kind(kind):
    if kind not in _W_NAMES:
        raise ConfigurationError(f"unknown cell kind {kind!r}")


def weight_names(kind: str) -> tuple[str, ...]:
    _check_kind(kind)
    extra = ("b_h",) if kind == "gru" else ()
    return _W_NAMES[kind] + _Y_NAMES[kind] + _B_NAMES[kind] + extra


def init_cell(kind: str, H: int, I: int, rng) -> dict[str, np.ndarray]:
    """Uniform(+-1/sqrt(fan_in)) matrices; biases use fan_in = H."""
    _check_kind(kind)
    w = {}
    for name in _W_NAMES[kind]:
        w[name] = init_uniform(rng, (H, H))
    for name in _Y_NAMES[kind]:
        w[name] = init_uniform(rng, (H, I))
    for name in _B_NAMES[kind] + (("b_h",) if kind == "gru" else ()):
        w[name] = init_uniform(rng, (H,), fan_in=H)
    return w


def zero_cell(kind: str, H: int, I: int) -> dict[str, np.ndarray]:
    _check_kind(kind)
    w = {n: np.zeros((H, H)) for n in _W_NAMES[kind]}
    w.update({n: np.zeros((H, I)) for n in _Y_NAMES[kind]})
    w.update({n: np.zeros(H) for n in _B_NAMES[kind]})
    if kind == "gru":
        w["b_h"] = np.zeros(H)
    return w


def cell_dims(kind: str, weights) -> tuple[int, int]:
    """(H, I) of a weight dict, after checking every block's shape."""
    _check_kind(kind)
    H, I = weights[_Y_NAMES[kind][0]].shape
    for n in _W_NAMES[kind]:
        if weights[n].shape != (H, H):
            raise ConfigurationError(f"{n} has shape {weights[n].shape}, expected {(H, H)}")
    for n in _Y_NAMES[kind]:
        if weights[n].shape != (H, I):
            raise ConfigurationError(f"{n} has shape {weights[n].shape}, expected {(H, I)}")
    for n in _B_NAMES[kind] + (("b_h",) if kind == "gru" else ()):
        if weights[n].shape != (H,):
            raise ConfigurationError(f"{n} has shape {weights[n].shape}, expected {(H,)}")
    return H, I


@dataclass
class CellState:
    h: np.ndarray
    s: np.ndarray | None = None  # LSTM cell state

    @classmethod
    def zeros(cls, kind, H, batch=None):
        shape = (H,) if batch is None else (batch, H)
        return cls(np.zeros(shape), np.zeros(shape) if kind == "lstm" else None)


@dataclass
class _Packed:
    kind: str
    H: int
    I: int
    Wcat: np.ndarray   # (nH, H)
    Ycat: np.ndarray   # (nH, I)
    bcat: np.ndarray   # (nH,)
    bh: np.ndarray | None   # GRU hidden bias inside the reset product


def _pack(kind, weights) -> _Packed:
    H, I = cell_dims(kind, weights)
    return _Packed(
        kind, H, I,
        np.concatenate([weights[n] for n in _W_NAMES[kind]], axis=0),
        np.concatenate([weights[n] for n in _Y_NAMES[kind]], axis=0),
        np.concatenate([weights[n] for n in _B_NAMES[kind]]),
        weights["b_h"] if kind == "gru" else None,
    )


def _unpack_grads(kind, H, dW, dY, db, dbh) -> dict[str, np.ndarray]:
    g = {}
    for j, n in enumerate(_W_NAMES[kind]):
        g[n] = dW[j * H:(j + 1) * H]
    for j, n in enumerate(_Y_NAMES[kind]):
        g[n] = dY[j * H:(j + 1) * H]
    for j, n in enumerate(_B_NAMES[kind]):
        g[n] = db[j * H:(j + 1) * H]
    if kind == "gru":
        g["b_h"] = dbh
    return g


# --------------------------------------------------------------------------
# single-step kernels (batched)
# --------------------------------------------------------------------------

def _step(pk: _Packed, xproj, h, s):
    """xproj = i @ Ycat.T + bcat. Returns (h_new, s_new, cache)."""
    H = pk.H
    hproj = h @ pk.Wcat.T
    if pk.kind == "rnn":
        h_new = np.tanh(hproj + xproj)
        return h_new, None, (h, h_new)
    if pk.kind == "gru":
        hf = hproj[:, :H] + pk.bh
        z = sigmoid(hproj[:, H:2 * H] + xproj[:, H:2 * H])
        r = sigmoid(hproj[:, 2 * H:] + xproj[:, 2 * H:])
        n = np.tanh(hf * r + xproj[:, :H])
        h_new = n * (1.0 - z) + h * z
        return h_new, None, (h, hf, z, r, n)
    pre = hproj + xproj
    f1 = sigmoid(pre[:, :H])
    f2 = sigmoid(pre[:, H:2 * H])
    f3 = sigmoid(pre[:, 2 * H:3 * H])
    f4 = np.tanh(pre[:, 3 * H:])
    s_new = f2 * s + f3 * f4
    ts = np.tanh(s_new)
    h_new = f1 * ts
    return h_new, s_new, (h, s, f1, f2, f3, f4, ts)


def _step_back(pk: _Packed, cache, dh, ds):
    """Returns (d_xproj, d_hproj_weights_input, dbh, dh_prev, ds_prev).

    ``d_hproj_weights_input`` is the gradient w.r.t. the hidden-side
    pre-activation, from which dWcat = d^T h_prev.
    """
    if pk.kind == "rnn":
        h_prev, h_new = cache
        d_pre = dh * (1.0 - h_new * h_new)
        return d_pre, d_pre, None, d_pre @ pk.Wcat, None
    if pk.kind == "gru":
        h_prev, hf, z, r, n = cache
        dn = dh * (1.0 - z)
        dz = dh * (h_prev - n)
        da = dn * (1.0 - n * n)
        dhf = da * r
        dr = da * hf
        dz_pre = dz * z * (1.0 - z)
        dr_pre = dr * r * (1.0 - r)
        d_x = np.concatenate([da, dz_pre, dr_pre], axis=1)
        d_hid = np.concatenate([dhf, dz_pre, dr_pre], axis=1)
        dh_prev = dh * z + d_hid @ pk.Wcat
        return d_x, d_hid, dhf.sum(axis=0), dh_prev, None
    h_prev, s_prev, f1, f2, f3, f4, ts = cache
    ds_tot = dh * f1 * (1.0 - ts * ts)
    if ds is not None:
        ds_tot = ds_tot + ds
    d_pre = np.concatenate([
        dh * ts * f1 * (1.0 - f1),
        ds_tot * s_prev * f2 * (1.0 - f2),
        ds_tot * f4 * f3 * (1.0 - f3),
        ds_tot * f3 * (1.0 - f4 * f4),
    ], axis=1)
    return d_pre, d_pre, None, d_pre @ pk.Wcat, ds_tot * f2


# --------------------------------------------------------------------------
# public single-step API
# --------------------------------------------------------------------------

@dataclass
class StepCache:
    kind: str
    packed: _Packed
    i: np.ndarray
    inner: tuple
    unbatched: bool


def cell_forward(kind: str, weights, i_k, state: CellState):
    """One cell update. Returns ``(new_state, cache)``."""
    pk = _pack(kind, weights)
    i_k = np.asarray(i_k, dtype=np.float64)
    unbatched = i_k.ndim == 1
    i2 = np.atleast_2d(i_k)
    h = np.atleast_2d(state.h)
    if i2.shape[-1] != pk.I or h.shape[-1] != pk.H:
        raise ConfigurationError(
            f"cell expects input size {pk.I} and state size {pk.H}, got {i2.shape[-1]} and {h.shape[-1]}"
        )
    s = None
    if kind == "lstm":
        s = np.atleast_2d(state.s if state.s is not None else np.zeros_like(h))
    xproj = i2 @ pk.Ycat.T + pk.bcat
    h_new, s_new, inner = _step(pk, xproj, h, s)
    if unbatched:
        h_new = h_new[0]
        s_new = None if s_new is None else s_new[0]
    return CellState(h_new, s_new), StepCache(kind, pk, i2, inner, unbatched)


def cell_backward(kind: str, cache: StepCache, grad_h, grad_s=None):
    """Gradients of one step. Returns ``(grad_weights, grad_i, grad_state)``."""
    if cache is None or not isinstance(cache, StepCache):
        raise UsageError("cell_backward needs the cache returned by cell_forward")
    if cache.kind != kind:
        raise UsageError(f"cache was produced by a {cache.kind} cell, not {kind}")
    pk = cache.packed
    dh = np.atleast_2d(np.asarray(grad_h, dtype=np.float64))
    ds = None if grad_s is None else np.atleast_2d(np.asarray(grad_s, dtype=np.float64))
    d_x, d_hid, dbh, dh_prev, ds_prev = _step_back(pk, cache.inner, dh, ds)
    h_prev = cache.inner[0]
    grads = _unpack_grads(kind, pk.H, d_hid.T @ h_prev, d_x.T @ cache.i, d_x.sum(axis=0), dbh)
    d_i = d_x @ pk.Ycat
    if cache.unbatched:
        d_i = d_i[0]
        dh_prev = dh_prev[0]
        ds_prev = None if ds_prev is None else ds_prev[0]
    return grads, d_i, CellState(dh_prev, ds_prev)


# --------------------------------------------------------------------------
# sequences
# --------------------------------------------------------------------------

@dataclass
class SequenceCache:
    kind: str
    packed: _Packed
    inputs: np.ndarray      # (T, B, I)
    steps: list


def sequence_forward(kind: str, weights, inputs):
    """Run a cell over ``inputs`` (T, B, I) from the zero state.

    Returns ``(states (T, B, H), cache)`` where ``states[t]`` is the state
    after consuming input ``t``.
    """
    pk = _pack(kind, weights)
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 3 or inputs.shape[2] != pk.I:
        raise ConfigurationError(f"expected inputs of shape (T, B, {pk.I}), got {inputs.shape}")
    T, B, _ = inputs.shape
    xproj = (inputs.reshape(T * B, pk.I) @ pk.Ycat.T + pk.bcat).reshape(T, B, -1)
    h = np.zeros((B, pk.H))
    s = np.zeros((B, pk.H)) if kind == "lstm" else None
    out = np.empty((T, B, pk.H))
    steps = []
    for t in range(T):
        h, s, inner = _step(pk, xproj[t], h, s)
        out[t] = h
        steps.append(inner)
    return out, SequenceCache(kind, pk, inputs, steps)


def sequence_backward(cache: SequenceCache, d_states):
    """BPTT through :func:`sequence_forward`. Returns ``(grad_weights, grad_inputs)``."""
    pk = cache.packed
    T, B, I = cache.inputs.shape
    d_states = np.asarray(d_states, dtype=np.float64)
    nH = pk.Wcat.shape[0]
    d_xproj = np.empty((T, B, nH))
    dW = np.zeros_like(pk.Wcat)
    dbh = np.zeros(pk.H) if pk.kind == "gru" else None
    dh_next = np.zeros((B, pk.H))
    ds_next = np.zeros((B, pk.H)) if pk.kind == "lstm" else None
    for t in range(T - 1, -1, -1):
        inner = cache.steps[t]
        d_x, d_hid, dbh_t, dh_next, ds_next = _step_back(pk, inner, d_states[t] + dh_next, ds_next)
        d_xproj[t] = d_x
        dW += d_hid.T @ inner[0]
        if dbh is not None:
            dbh += dbh_t
    flat = d_xproj.reshape(T * B, nH)
    dY = flat.T @ cache.inputs.reshape(T * B, I)
    db = flat.sum(axis=0)
    d_inputs = (flat @ pk.Ycat).reshape(T, B, I)
    return _unpack_grads(pk.kind, pk.H, dW, dY, db, dbh), d_inputs


@dataclass
class BiCache:
    fwd: SequenceCache
    bwd: SequenceCache


def bidirectional_forward(kind: str, fwd_weights, bwd_weights, inputs):
    """Forward pass left-to-right and backward pass right-to-left.

    Returns ``(fwd_states, bwd_states, cache)``, both ``(T, B, H)``:
    ``fwd_states[t]`` has consumed inputs ``0..t`` and ``bwd_states[t]`` has
    consumed inputs ``t..T-1`` (the backward recursion's state indexed one
    below the input that produced it). Pairing the two arrays at the same
    position therefore gives the forward state ``h'_k`` together with the
    backward state ``h''_{k-1}``.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    f_out, f_cache = sequence_forward(kind, fwd_weights, inputs)
    b_out, b_cache = sequence_forward(kind, bwd_weights, inputs[::-1])
    return f_out, b_out[::-1], BiCache(f_cache, b_cache)


def bidirectional_backward(cache: BiCache, d_fwd, d_bwd):
    gf, dxf = sequence_backward(cache.fwd, d_fwd)
    gb, dxb = sequence_backward(cache.bwd, np.asarray(d_bwd)[::-1])
    return gf, gb, dxf + dxb[::-1]


def stack_forward(kind: str, layers, inputs):
    """Stacked bidirectional layers; ``layers`` is a list of (fwd, bwd) weight dicts.

    Layer ``l+1`` consumes the position-wise concatenation
    ``[fwd_states[t], bwd_states[t]]`` of layer ``l``. Returns
    ``(outputs (T, B, 2H), caches)``.
    """
    x = np.asarray(inputs, dtype=np.float64)
    caches = []
    for fw, bw in layers:
        H, I = cell_dims(kind, fw)
        if x.shape[-1] != I:
            raise ConfigurationError(f"layer expects input size {I}, got {x.shape[-1]}")
        f, b, c = bidirectional_forward(kind, fw, bw, x)
        caches.append(c)
        x = np.concatenate([f, b], axis=-1)
    return x, caches


def stack_backward(caches, d_outputs):
    """Returns ``(per-layer [(grad_fwd, grad_bwd), ...], grad_inputs)``."""
    d = np.asarray(d_outputs, dtype=np.float64)
    grads = []
    for c in reversed(caches):
        H = c.fwd.packed.H
        gf, gb, d = bidirectional_backward(c, d[..., :H], d[..., H:])
        grads.append((gf, gb))
    return grads[::-1], d

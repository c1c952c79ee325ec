"""Dense-array helpers, seeded Gaussian sampling, ADAM and gradient clipping.

Everything here operates on 64-bit numpy arrays. Parameter collections are
plain ``dict[str, np.ndarray]`` so that optimizer state, gradients and
snapshots can be copied and compared block by block.

Random streams use numpy's counter-based Philox bit generator. Child streams
are derived with :class:`numpy.random.SeedSequence` spawn keys, so a stream is
a pure function of ``(seed, *keys)`` and never of worker count or call order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, NonFiniteGradientError

Params = dict[str, np.ndarray]


def affine(A: np.ndarray, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Return ``A @ x + b`` after checking dimensions."""
    A = np.asarray(A, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if A.ndim != 2 or x.ndim != 1 or b.ndim != 1:
        raise ConfigurationError("affine expects a matrix and two vectors")
    if A.shape[1] != x.shape[0] or A.shape[0] != b.shape[0]:
        raise ConfigurationError(
            f"affine dimension mismatch: A{A.shape}, x({x.shape[0]}), b({b.shape[0]})"
        )
    return A @ x + b


def sigmoid(x):
    # tanh form is overflow-free for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# --------------------------------------------------------------------------
# random streams
# --------------------------------------------------------------------------

def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Deterministic Philox stream for ``seed`` and optional spawn ``keys``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def gaussian(rng: np.random.Generator, n, sigma: float) -> np.ndarray:
    """``n`` i.i.d. N(0, sigma^2) samples (``n`` may be a shape tuple).

    ``sigma == 0`` returns zeros without consuming the stream.
    """
    if sigma < 0:
        raise ConfigurationError("sigma must be non-negative")
    if sigma == 0:
        return np.zeros(n)
    return sigma * rng.standard_normal(n)


def init_uniform(rng: np.random.Generator, shape, fan_in: int | None = None) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); fan_in defaults to the last axis."""
    fan_in = fan_in if fan_in is not None else shape[-1]
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------

@dataclass
class AdamState:
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Params, **hyper) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            **hyper,
        )

    def copy(self) -> "AdamState":
        return AdamState(
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
            t=self.t, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
        )


def check_finite(grads: Params) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)


def adam_step(params: Params, grads: Params, state: AdamState, lr: float) -> tuple[Params, AdamState]:
    """One bias-corrected ADAM update. Inputs are left untouched.

    Blocks missing from ``grads`` are treated as zero gradient.
    """
    if lr <= 0:
        raise ConfigurationError("learning rate must be positive")
    check_finite(grads)
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        elif g.shape != p.shape:
            raise ConfigurationError(f"gradient shape mismatch for {name!r}: {g.shape} vs {p.shape}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        new_params[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        m_new[name] = m
        v_new[name] = v
    return new_params, AdamState(m_new, v_new, t, b1, b2, state.eps)


def global_norm(grads: Params) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_gradient_global(grads: Params, max_norm: float = 1.0) -> Params:
    """Scale all blocks by ``max_norm / norm`` when the global L2 norm exceeds it."""
    if max_norm <= 0:
        raise ConfigurationError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads)
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def clip_gradient_elementwise(grads: Params, max_abs: float = 1.0) -> Params:
    if max_abs <= 0:
        raise ConfigurationError("max_abs must be positive")
    return {k: np.clip(g, -max_abs, max_abs) for k, g in grads.items()}


# --------------------------------------------------------------------------
# finite differences
# --------------------------------------------------------------------------

def finite_diff_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x`` (any shape)."""
    x = np.array(x, dtype=np.float64)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x[0] if scalar else x)
        flat[i] = orig - h
        fm = f(x[0] if scalar else x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad[0] if scalar else grad


def relative_error(a, b, floor: float = 1e-8) -> float:
    """max |a - b| / max(|a|, |b|, floor) over elements."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


# --------------------------------------------------------------------------
# normalization
# --------------------------------------------------------------------------

NORM_EPS = 1e-8


def batch_normalize(x: np.ndarray, axes, eps: float = NORM_EPS):
    """Zero-mean/unit-variance over ``axes`` using the statistics of ``x`` itself.

    Returns ``(y, cache)``; the variance is the biased (population) estimate.
    """
    mean = x.mean(axis=axes, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = centered * inv
    return y, (y, inv, axes)


def batch_normalize_backward(cache, dy: np.ndarray) -> np.ndarray:
    y, inv, axes = cache
    n = y.size // inv.size
    sum_dy = dy.sum(axis=axes, keepdims=True)
    sum_dyy = (dy * y).sum(axis=axes, keepdims=True)
    return inv * (dy - sum_dy / n - y * sum_dyy / n)


def apply_normalization(x: np.ndarray, mean, var, eps: float = NORM_EPS) -> np.ndarray:
    """Normalize with fixed (calibrated) statistics."""
    return (x - mean) / np.sqrt(var + eps)


class RunningMoments:
    """Mergeable mean/variance accumulator (Chan et al. pairwise update)."""

    def __init__(self, shape):
        self.count = 0
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)

    def update(self, x: np.ndarray, axes) -> None:
        n = int(np.prod([x.shape[a] for a in np.atleast_1d(axes)]))
        if n == 0:
            return
        bm = x.mean(axis=axes)
        bm2 = ((x - np.expand_dims(bm, axes)) ** 2).sum(axis=axes)
        total = self.count + n
        delta = bm - self.mean
        self.mean = self.mean + delta * (n / total)
        self.m2 = self.m2 + bm2 + delta * delta * (self.count * n / total)
        self.count = total

    @property
    def var(self) -> np.ndarray:
        return self.m2 / max(self.count, 1)

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from defcode.errors import ConfigurationError, NonFiniteGradientError
from defcode.numerics import (
    AdamState,
    RunningMoments,
    adam_step,
    affine,
    apply_normalization,
    batch_normalize,
    batch_normalize_backward,
    clip_gradient_elementwise,
    clip_gradient_global,
    finite_diff_gradient,
    gaussian,
    global_norm,
    make_rng,
    sigmoid,
)


def test_affine_identity():
    np.testing.assert_array_equal(affine(np.eye(2), np.array([2.0, 3.0]), np.array([1.0, 1.0])), [3.0, 4.0])


def test_affine_zero_map():
    np.testing.assert_array_equal(affine(np.zeros((2, 2)), np.array([5.0, 7.0]), np.array([1.0, -1.0])), [1.0, -1.0])


def test_affine_matches_scalar_loop(rng):
    A, x, b = rng.standard_normal((3, 4)), rng.standard_normal(4), rng.standard_normal(3)
    ref = [sum(A[i, j] * x[j] for j in range(4)) + b[i] for i in range(3)]
    np.testing.assert_allclose(affine(A, x, b), ref, rtol=0, atol=1e-12)


@pytest.mark.parametrize("shapes", [((2, 3), 4, 2), ((2, 3), 3, 3)])
def test_affine_dimension_mismatch(shapes):
    (r, c), nx, nb = shapes
    with pytest.raises(ConfigurationError):
        affine(np.zeros((r, c)), np.zeros(nx), np.zeros(nb))


def test_sigmoid_stable_at_extremes():
    v = sigmoid(np.array([-800.0, 0.0, 800.0]))
    assert np.all(np.isfinite(v))
    np.testing.assert_allclose(v, [0.0, 0.5, 1.0])


# ---- ADAM ---------------------------------------------------------------

def _scalar_adam(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh, vh = m / (1 - b1 ** t), v / (1 - b2 ** t)
        theta = theta - lr * mh / (math.sqrt(vh) + eps)
    return theta


def test_adam_first_step_is_minus_lr():
    p = {"x": np.array(0.0)}
    new, state = adam_step(p, {"x": np.array(1.0)}, AdamState.zeros_like(p), 0.02)
    assert new["x"] == pytest.approx(-0.02, abs=1e-9)
    assert state.t == 1


def test_adam_zero_gradient_keeps_params(rng):
    p = {"a": rng.standard_normal((2, 3)), "b": rng.standard_normal(4)}
    new, _ = adam_step(p, {k: np.zeros_like(v) for k, v in p.items()}, AdamState.zeros_like(p), 0.02)
    for k in p:
        np.testing.assert_array_equal(new[k], p[k])


def test_adam_two_steps_match_scalar_oracle(rng):
    theta = rng.standard_normal(5)
    g = rng.standard_normal(5)
    p = {"t": theta}
    state = AdamState.zeros_like(p)
    for _ in range(2):
        p, state = adam_step(p, {"t": g}, state, 0.02)
    ref = [_scalar_adam(theta[i], [g[i], g[i]], 0.02) for i in range(5)]
    np.testing.assert_allclose(p["t"], ref, rtol=0, atol=1e-12)
    assert state.t == 2


def test_adam_is_pure(rng):
    p = {"t": rng.standard_normal(3)}
    before = p["t"].copy()
    state = AdamState.zeros_like(p)
    adam_step(p, {"t": np.ones(3)}, state, 0.1)
    np.testing.assert_array_equal(p["t"], before)
    assert state.t == 0 and not state.m["t"].any()


def test_adam_non_finite_gradient_names_block():
    p = {"good": np.zeros(2), "bad": np.zeros(2)}
    with pytest.raises(NonFiniteGradientError, match="bad"):
        adam_step(p, {"good": np.ones(2), "bad": np.array([1.0, np.nan])}, AdamState.zeros_like(p), 0.1)


# ---- clipping -----------------------------------------------------------

def test_clip_below_threshold_unchanged():
    g = {"a": np.array([0.3, 0.4])}
    assert clip_gradient_global(g)["a"] is not None
    np.testing.assert_array_equal(clip_gradient_global(g)["a"], g["a"])


def test_clip_norm_two_halves_everything():
    g = {"a": np.array([1.2, 0.0]), "b": np.array([[1.6]])}
    out = clip_gradient_global(g, 1.0)
    np.testing.assert_allclose(out["a"], g["a"] / 2, atol=1e-15)
    np.testing.assert_allclose(out["b"], g["b"] / 2, atol=1e-15)


@given(st.integers(0, 10_000), st.floats(0.01, 100))
def test_clip_post_norm_and_direction(seed, scale):
    r = np.random.default_rng(seed)
    g = {"a": scale * r.standard_normal(7), "b": scale * r.standard_normal((2, 3))}
    n = global_norm(g)
    out = clip_gradient_global(g, 1.0)
    assert global_norm(out) == pytest.approx(min(n, 1.0), abs=1e-12)
    flat_in = np.concatenate([g["a"], g["b"].ravel()])
    flat_out = np.concatenate([out["a"], out["b"].ravel()])
    cos = flat_in @ flat_out / (np.linalg.norm(flat_in) * np.linalg.norm(flat_out))
    assert cos == pytest.approx(1.0, abs=1e-12)


def test_elementwise_clip():
    out = clip_gradient_elementwise({"a": np.array([-3.0, 0.5, 2.0])}, 1.0)
    np.testing.assert_array_equal(out["a"], [-1.0, 0.5, 1.0])


# ---- finite differences -------------------------------------------------

def test_fd_square():
    assert finite_diff_gradient(lambda x: float(x[0] ** 2), np.array([3.0]))[0] == pytest.approx(6.0, abs=1e-8)


def test_fd_tanh():
    assert finite_diff_gradient(lambda x: float(np.tanh(x[0])), np.array([0.0]))[0] == pytest.approx(1.0, abs=1e-8)


def test_fd_composed_affine_tanh(rng):
    A, b, c = rng.standard_normal((3, 4)), rng.standard_normal(3), rng.standard_normal(3)
    x = rng.standard_normal(4)
    f = lambda v: float(c @ np.tanh(A @ v + b))
    analytic = A.T @ (c * (1 - np.tanh(A @ x + b) ** 2))
    np.testing.assert_allclose(finite_diff_gradient(f, x), analytic, rtol=1e-6)


def test_fd_leaves_input_untouched(rng):
    x = rng.standard_normal((2, 2))
    x0 = x.copy()
    finite_diff_gradient(lambda v: float(np.sum(v ** 3)), x)
    np.testing.assert_array_equal(x, x0)


# ---- RNG and Gaussian noise ---------------------------------------------

def test_gaussian_sigma_zero():
    np.testing.assert_array_equal(gaussian(make_rng(0), 4, 0.0), np.zeros(4))


def test_gaussian_moments():
    s = gaussian(make_rng(7), 1_000_000, 1.0)
    assert abs(s.mean()) <= 0.005
    assert abs(s.var() - 1.0) <= 0.01


def test_same_seed_same_stream():
    a = gaussian(make_rng(42, 3, 1), 100, 1.0)
    b = gaussian(make_rng(42, 3, 1), 100, 1.0)
    assert a.tobytes() == b.tobytes()
    assert gaussian(make_rng(42, 3, 2), 100, 1.0).tobytes() != a.tobytes()


# ---- normalization helpers ----------------------------------------------

def test_batch_normalize_backward_fd(rng):
    x = rng.standard_normal((5, 3, 2))
    R = rng.standard_normal(x.shape)
    y, cache = batch_normalize(x, (0, 1))
    fd = finite_diff_gradient(lambda v: float(np.sum(R * batch_normalize(v, (0, 1))[0])), x)
    np.testing.assert_allclose(batch_normalize_backward(cache, R), fd, rtol=1e-6, atol=1e-9)


def test_constant_batch_normalizes_to_zero():
    y, _ = batch_normalize(np.full((10, 2), 3.0), (0,))
    np.testing.assert_array_equal(y, 0.0)


def test_apply_normalization():
    assert apply_normalization(np.array(5.0), 3.0, 4.0) == pytest.approx(1.0, abs=1e-8)


def test_running_moments_merge_matches_numpy(rng):
    data = rng.normal(3, 2, size=(1000, 4))
    m = RunningMoments((4,))
    for chunk in np.array_split(data, 7):
        m.update(chunk, (0,))
    np.testing.assert_allclose(m.mean, data.mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(m.var, data.var(axis=0), rtol=1e-10)
    assert m.count == 1000

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mextract.numkit import (
    AdamState,
    KernelError,
    RngStream,
    activation,
    adam_step,
    apply_robust_scaler,
    backprop,
    bce_loss,
    dense,
    dropout,
    fit_robust_scaler,
    forward_trace,
    init_params,
    invert_robust_scaler,
    layer_norm,
)
from oracles import fd_gradients, naive_matvec, sort_quantile


# -- activations ---------------------------------------------------------------

def test_activation_examples():
    assert activation("elu", [0.0])[0] == 0.0
    assert activation("sigmoid", [0.0])[0] == 0.5
    assert activation("elu", [-1.0])[0] == pytest.approx(math.exp(-1) - 1, abs=1e-12)
    assert activation("elu", [-1.0])[0] == pytest.approx(-0.632121, abs=1e-6)


def test_activation_rejects_nonfinite_with_index():
    with pytest.raises(KernelError, match=r"\(2,\)"):
        activation("elu", [0.0, 1.0, np.nan])


def test_sigmoid_extremes_stay_finite_and_open():
    s = activation("sigmoid", [-700.0, 30.0, 700.0])
    assert np.all(np.isfinite(s))
    assert 0.0 < s[0] < s[1] <= 1.0


# -- layer norm ----------------------------------------------------------------

def test_layer_norm_constant_vector_is_zero():
    out = layer_norm(np.full(5, 3.0), np.ones(5), np.zeros(5))
    assert np.allclose(out, 0.0)


def test_layer_norm_symmetric_pair():
    out = layer_norm([1.0, -1.0], np.ones(2), np.zeros(2), eps=1e-12)
    assert np.allclose(out, [1.0, -1.0], atol=1e-9)


def test_layer_norm_hand_computed():
    eps = 1e-5
    denom = math.sqrt(8 / 3 + eps)
    expected = [(v - 2) / denom * 2 + 1 for v in (0, 2, 4)]
    out = layer_norm([0.0, 2.0, 4.0], np.full(3, 2.0), np.ones(3), eps)
    assert np.allclose(out, expected, atol=1e-12)


def test_layer_norm_length_mismatch():
    with pytest.raises(KernelError):
        layer_norm(np.zeros(3), np.ones(2), np.zeros(2))


@given(arrays(np.float64, st.integers(2, 20), elements=st.floats(-1e3, 1e3)))
def test_layer_norm_output_mean_zero(x):
    out = layer_norm(x, np.ones_like(x), np.zeros_like(x))
    assert abs(out.mean()) < 1e-6


# -- dense ---------------------------------------------------------------------

def test_dense_identity_and_zero():
    x = np.array([1.5, -2.0, 0.25])
    assert np.array_equal(dense(x, np.eye(3), np.zeros(3)), x)
    c = np.array([4.0, 5.0])
    assert np.array_equal(dense(x, np.zeros((2, 3)), c), c)


def test_dense_matches_naive_loop():
    g = np.random.default_rng(3)
    W, x, b = g.normal(size=(3, 2)), g.normal(size=2), g.normal(size=3)
    assert np.allclose(dense(x, W, b), naive_matvec(W.tolist(), x.tolist(), b.tolist()), atol=1e-14)


def test_dense_dimension_mismatch():
    with pytest.raises(KernelError):
        dense(np.zeros(4), np.zeros((2, 3)), np.zeros(2))


# -- dropout -------------------------------------------------------------------

def test_dropout_rate_zero_and_eval_mode_are_identity():
    x = np.arange(6.0)
    out, mask = dropout(x, 0.0, RngStream(1), True)
    assert np.array_equal(out, x) and mask.all()
    out, mask = dropout(x, 0.9, RngStream(1), False)
    assert np.array_equal(out, x) and mask.all()


def test_dropout_law_of_large_numbers():
    g = np.random.default_rng(0)
    x = g.uniform(0.5, 1.5, size=100_000)
    out, mask = dropout(x, 0.3, RngStream(7), True)
    assert abs(mask.mean() - 0.7) < 0.01
    assert abs(out.mean() - x.mean()) / x.mean() < 0.02


def test_dropout_rejects_rate_one():
    with pytest.raises(KernelError):
        dropout(np.ones(3), 1.0, RngStream(0), True)


def test_dropout_masks_are_seed_deterministic():
    a = dropout(np.ones(50), 0.5, RngStream(11), True)[1]
    b = dropout(np.ones(50), 0.5, RngStream(11), True)[1]
    assert np.array_equal(a, b)


# -- loss ----------------------------------------------------------------------

def test_bce_examples():
    assert bce_loss([1 - 1e-7], [1]) == pytest.approx(0.0, abs=1e-6)
    assert bce_loss([0.5], [1]) == pytest.approx(0.693147, abs=1e-6)
    assert bce_loss([0.5, 0.5], [0, 1]) == pytest.approx(math.log(2), abs=1e-12)


def test_bce_clamps_and_is_nonnegative():
    assert np.isfinite(bce_loss([0.0, 1.0], [1, 0]))
    with pytest.raises(KernelError):
        bce_loss([], [])


@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=30))
def test_bce_nonnegative(pairs):
    p, y = zip(*pairs)
    assert bce_loss(p, y) >= 0.0


# -- backprop ------------------------------------------------------------------

def test_logistic_regression_gradient_closed_form():
    # the output layer is a logistic regression on the last hidden activations
    rng = RngStream(5)
    params = init_params(4, [3], rng)
    g = np.random.default_rng(5)
    X = g.normal(size=(7, 4))
    y = g.integers(0, 2, 7).astype(float)
    tr = forward_trace(params, X)
    grads = backprop(params, tr, y)
    h = tr.inputs[-1]
    expected = ((tr.scores - y)[:, None] * h).mean(axis=0)
    assert np.allclose(grads["out.W"][0], expected, atol=1e-14)
    assert grads["out.b"][0] == pytest.approx((tr.scores - y).mean(), abs=1e-14)


def test_zero_loss_batch_has_tiny_gradient():
    params = init_params(3, [4], RngStream(2))
    params["out.b"] = np.array([40.0])
    X = np.random.default_rng(0).normal(size=(5, 3))
    tr = forward_trace(params, X)
    grads = backprop(params, tr, np.ones(5))
    assert max(np.abs(g).max() for g in grads.values()) < 1e-12


def _random_net(seed, with_skip):
    rng = RngStream(seed)
    g = rng.generator
    layers = int(g.integers(1, 5))
    dims = [int(g.integers(1, 17)) for _ in range(layers + 1)]
    params = init_params(dims[0], dims[1:], rng, skip=with_skip)
    for k in params:
        params[k] = params[k] + g.normal(0, 0.3, params[k].shape)
    n = 5
    X = g.normal(size=(n, dims[0]))
    y = g.integers(0, 2, n).astype(float)
    side = g.integers(0, 2, n).astype(float)
    return params, X, y, side, rng


@pytest.mark.parametrize("seed", range(6))
def test_backprop_matches_finite_differences(seed):
    params, X, y, side, rng = _random_net(seed, with_skip=seed % 2 == 0)
    rate = 0.3
    tr = forward_trace(params, X, side, rate, rng, True)
    grads = backprop(params, tr, y)
    fd = fd_gradients(params, X, side, tr.masks, y, rate, h=1e-4)
    for k in params:
        a, f = grads[k], fd[k]
        big = np.abs(a) > 1e-6
        rel = np.abs(a - f)[big] / np.maximum(np.abs(a), np.abs(f))[big]
        assert rel.size == 0 or rel.max() < 1e-4, k


def test_backprop_rejects_stale_trace():
    params, X, y, side, rng = _random_net(1, False)
    tr = forward_trace(params, X)
    params, _ = adam_step(params, backprop(params, tr, y), AdamState())
    with pytest.raises(KernelError, match="stale"):
        backprop(params, tr, y)
    with pytest.raises(KernelError):
        backprop(params, None, y)


def test_skip_weight_requires_side_input():
    params = init_params(3, [2], RngStream(0), skip=True)
    with pytest.raises(KernelError):
        forward_trace(params, np.zeros((1, 3)))


def test_forward_determinism_with_seed():
    params, X, y, side, _ = _random_net(9, True)
    a = forward_trace(params, X, side, 0.3, RngStream(4), True)
    b = forward_trace(params, X, side, 0.3, RngStream(4), True)
    assert np.array_equal(a.scores, b.scores)


# -- adam ----------------------------------------------------------------------

def _hand_adam(p, gs, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(gs, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1**t)
        vh = v / (1 - b2**t)
        p = p - lr * mh / (math.sqrt(vh) + eps)
    return p


def test_adam_zero_gradient_leaves_params():
    p = {"w": np.array([1.0, -2.0])}
    st_ = AdamState()
    new, st_ = adam_step(p, {"w": np.zeros(2)}, st_)
    assert np.array_equal(new["w"], p["w"])
    assert st_.t == 1 and not st_.m["w"].any() and not st_.v["w"].any()


@pytest.mark.parametrize("g", [3.7, -0.002, 1e4])
def test_adam_first_step_is_signed_lr(g):
    new, _ = adam_step({"w": np.array([0.0])}, {"w": np.array([g])}, AdamState())
    assert new["w"][0] == pytest.approx(-1e-3 * math.copysign(1, g), rel=1e-4)


def test_adam_two_steps_match_hand_reference():
    p = {"w": np.array([0.5])}
    st_ = AdamState()
    for g in (0.3, -1.2):
        p, st_ = adam_step(p, {"w": np.array([g])}, st_)
    assert p["w"][0] == pytest.approx(_hand_adam(0.5, [0.3, -1.2]), abs=1e-15)
    assert st_.t == 2


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState())


# -- robust scaler ------------------------------------------------------------

def test_scaler_constant_column_passes_through_centered():
    X = np.array([[5.0], [5.0], [5.0], [5.0]])
    prm = fit_robust_scaler(X)
    assert prm.scale[0] == 0.0
    assert np.array_equal(apply_robust_scaler(prm, X), np.zeros((4, 1)))


def test_scaler_matches_sort_quantile_oracle():
    col = [1.0, 2.0, 3.0, 4.0, 100.0]
    prm = fit_robust_scaler(np.array(col)[:, None])
    assert prm.center[0] == 3.0
    assert prm.scale[0] == pytest.approx(sort_quantile(col, 0.75) - sort_quantile(col, 0.25))


@given(arrays(np.float64, (12, 3), elements=st.integers(-10**7, 10**7).map(lambda v: v / 1000)))
def test_scaler_round_trip(X):
    prm = fit_robust_scaler(X)
    back = invert_robust_scaler(prm, apply_robust_scaler(prm, X))
    assert np.allclose(back, X, atol=1e-9, rtol=0)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_scaler_refit_on_scaled_data_is_identity(seed):
    X = np.random.default_rng(seed).normal(size=(41, 4))
    Z = apply_robust_scaler(fit_robust_scaler(X), X)
    again = fit_robust_scaler(Z)
    assert np.allclose(again.center, 0.0, atol=1e-9)
    assert np.allclose(again.scale, 1.0, atol=1e-9)


def test_scaler_rejects_empty():
    with pytest.raises(ValueError):
        fit_robust_scaler(np.zeros((0, 3)))


def test_rng_stream_children_are_independent_of_parent_usage():
    a = RngStream(42)
    a.uniform(size=100)
    b = RngStream(42)
    assert np.array_equal(a.child(3).uniform(size=5), b.child(3).uniform(size=5))

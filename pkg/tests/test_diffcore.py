import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afford2d import diffcore as dc
from afford2d.errors import ContractViolation


def fd_gradients(loss_fn, arrays, h=1e-6):
    """Central finite differences of a scalar function of flat arrays."""
    grads = []
    for k, arr in enumerate(arrays):
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = loss_fn(arrays)
            flat[i] = orig - h
            lo = loss_fn(arrays)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads


def assert_close_rel(a, b, tol=1e-5):
    a = np.asarray(a)
    b = np.asarray(b)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    assert np.all(np.abs(a - b) <= tol * denom), f"max err {np.max(np.abs(a - b) / denom)}"


# ---------------------------------------------------------------------------
# mlp_forward


def test_mlp_forward_zero_weights_identity_final():
    mlp = dc.Mlp([(np.zeros((3, 2)), np.zeros(3))], final="identity")
    out = dc.mlp_forward(mlp, np.ones((4, 2)))
    assert out.shape == (4, 3)
    assert np.all(out == 0.0)


def test_mlp_forward_zero_weights_sigmoid_final():
    mlp = dc.Mlp([(np.zeros((3, 2)), np.zeros(3))], final="sigmoid")
    out = dc.mlp_forward(mlp, np.random.default_rng(0).normal(size=(5, 2)))
    assert np.all(out == 0.5)


def test_mlp_forward_matches_hand_matrix_chain():
    # Independent oracle: explicit matrix arithmetic for a fixed 2-layer net.
    rng = np.random.default_rng(42)
    w1 = rng.normal(size=(4, 3))
    b1 = rng.normal(size=4)
    w2 = rng.normal(size=(2, 4))
    b2 = rng.normal(size=2)
    x = rng.normal(size=(5, 3))
    mlp = dc.Mlp([(w1, b1), (w2, b2)], final="identity")

    expected = np.tanh(x @ w1.T + b1) @ w2.T + b2
    got = dc.mlp_forward(mlp, x)
    np.testing.assert_allclose(got, expected, rtol=0, atol=1e-14)


def test_mlp_forward_width_mismatch_raises():
    mlp = dc.mlp_init([3, 2], rng=np.random.default_rng(1))
    with pytest.raises(ContractViolation):
        dc.mlp_forward(mlp, np.zeros((2, 5)))


@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2 ** 31 - 1))
@settings(max_examples=30, deadline=None)
def test_sigmoid_final_strictly_in_unit_interval(batch, width, seed):
    rng = np.random.default_rng(seed)
    mlp = dc.mlp_init([width, 4, 2], final="sigmoid", rng=rng)
    x = rng.normal(scale=50.0, size=(batch, width))
    out = dc.mlp_forward(mlp, x)
    assert np.all(out > 0.0) and np.all(out < 1.0)


# ---------------------------------------------------------------------------
# backprop


def test_backprop_linear_sum_gives_unit_gradients():
    p = dc.leaf(np.arange(6.0).reshape(2, 3))
    loss = dc.tsum(p)
    grads = dc.backprop(loss, [p])
    np.testing.assert_array_equal(grads[0], np.ones((2, 3)))


def test_backprop_quadratic_closed_form():
    # loss = ||W x - y||^2, dL/dW = 2 (W x - y) x^T
    rng = np.random.default_rng(3)
    w = rng.normal(size=(3, 4))
    x = rng.normal(size=(4, 1))
    y = rng.normal(size=(3, 1))
    wl = dc.leaf(w)
    r = dc.sub(dc.matmul(wl, dc.constant(x)), dc.constant(y))
    loss = dc.tsum(dc.mul(r, r))
    grads = dc.backprop(loss, [wl])
    expected = 2.0 * (w @ x - y) @ x.T
    np.testing.assert_allclose(grads[0], expected, rtol=1e-12, atol=1e-12)


def test_backprop_requires_scalar_loss():
    p = dc.leaf(np.ones(3))
    with pytest.raises(ContractViolation):
        dc.backprop(dc.tanh(p), [p])


def _random_net_loss(arrays):
    """A small net exercising every op with gradient support."""
    w1, b1, w2, b2, logstd = arrays
    x = _random_net_loss.x
    h = np.tanh(x @ w1.T + b1)
    pooled = h[np.argmax(h, axis=0), np.arange(h.shape[1])]
    z = np.concatenate([pooled, pooled])
    y = z @ w2.T + b2
    s = 1.0 / (1.0 + np.exp(-y))
    std = np.exp(np.clip(logstd, -5.0, 2.0))
    return float(np.mean((s - 0.25) ** 2) + np.sum(std) + np.mean(np.minimum(y, 0.3 * y)))


def _build_net_graph(leaves):
    w1, b1, w2, b2, logstd = leaves
    x = dc.constant(_random_net_loss.x)
    h = dc.tanh(dc.add(dc.matmul(x, dc._transpose_leaf(w1)), b1))
    pooled = dc.max_axis(h, axis=0)
    z = dc.reshape(dc.concat([pooled, pooled], axis=0), (1, -1))
    y = dc.add(dc.matmul(z, dc._transpose_leaf(w2)), b2)
    s = dc.sigmoid(y)
    std = dc.exp(dc.clamp(logstd, -5.0, 2.0))
    return dc.add(
        dc.add(dc.tmean(dc.mul(dc.sub(s, 0.25), dc.sub(s, 0.25))), dc.tsum(std)),
        dc.tmean(dc.minimum(y, dc.mul(dc.constant(0.3), y))),
    )


def test_backprop_matches_finite_differences_on_random_nets():
    rng = np.random.default_rng(7)
    for trial in range(20):
        w1 = rng.normal(scale=0.7, size=(4, 3))
        b1 = rng.normal(scale=0.3, size=4)
        w2 = rng.normal(scale=0.7, size=(2, 8))
        b2 = rng.normal(scale=0.3, size=2)
        logstd = rng.uniform(-1.0, 1.0, size=3)
        _random_net_loss.x = rng.normal(size=(5, 3))
        arrays = [w1, b1, w2, b2, logstd]

        leaves = [dc.leaf(a.copy()) for a in arrays]
        loss = _build_net_graph(leaves)
        assert abs(loss.data.item() - _random_net_loss(arrays)) < 1e-12
        ad = dc.backprop(loss, leaves)
        fd = fd_gradients(_random_net_loss, arrays)
        for g_ad, g_fd in zip(ad, fd):
            assert_close_rel(g_ad, g_fd, tol=1e-5)


def test_backprop_deterministic():
    rng = np.random.default_rng(11)
    w = rng.normal(size=(3, 3))
    x = rng.normal(size=(2, 3))

    def run():
        wl = dc.leaf(w.copy())
        out = dc.tanh(dc.matmul(dc.constant(x), dc._transpose_leaf(wl)))
        loss = dc.tmean(dc.mul(out, out))
        return dc.backprop(loss, [wl])[0]

    g1, g2 = run(), run()
    assert np.array_equal(g1, g2)


# ---------------------------------------------------------------------------
# maxpool_set


def test_maxpool_single_point():
    pooled, winners = dc.maxpool_set(np.array([[1.0, -2.0, 3.0]]))
    np.testing.assert_array_equal(pooled, [1.0, -2.0, 3.0])
    assert winners == [0, 0, 0]


def test_maxpool_permutation_invariant():
    rng = np.random.default_rng(5)
    feats = rng.normal(size=(7, 4))
    perm = rng.permutation(7)
    p1, _ = dc.maxpool_set(feats)
    p2, _ = dc.maxpool_set(feats[perm])
    assert np.array_equal(p1, p2)


def test_maxpool_against_column_scan():
    rng = np.random.default_rng(9)
    feats = rng.normal(size=(5, 3))
    pooled, winners = dc.maxpool_set(feats)
    for j in range(3):
        best_val, best_i = -math.inf, -1
        for i in range(5):
            if feats[i, j] > best_val:
                best_val, best_i = feats[i, j], i
        assert pooled[j] == best_val
        assert winners[j] == best_i


def test_maxpool_empty_raises():
    with pytest.raises(ContractViolation):
        dc.maxpool_set(np.zeros((0, 3)))


def test_maxpool_tie_breaks_lowest_index():
    feats = np.array([[1.0, 5.0], [1.0, 5.0], [0.0, 5.0]])
    _, winners = dc.maxpool_set(feats)
    assert winners == [0, 0]


@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 12), st.integers(1, 6))
@settings(max_examples=30, deadline=None)
def test_maxpool_permutation_property(seed, n, d):
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(n, d))
    perm = rng.permutation(n)
    assert np.array_equal(dc.maxpool_set(feats)[0], dc.maxpool_set(feats[perm])[0])


# ---------------------------------------------------------------------------
# adam_step


def test_adam_zero_gradient_leaves_params_and_decays_moments():
    p = [np.array([1.0, -2.0])]
    state = dc.adam_init(p, lr=0.1)
    state.m[0][:] = [0.5, 0.5]
    state.v[0][:] = [0.25, 0.25]
    before = p[0].copy()
    dc.adam_step(p, [np.zeros(2)], state)
    # zero grad: m,v decay toward zero but the update is m_hat/(sqrt(v_hat)+eps) != 0;
    # the contract here is about a *fresh* state: params unchanged.
    p2 = [np.array([1.0, -2.0])]
    s2 = dc.adam_init(p2, lr=0.1)
    dc.adam_step(p2, [np.zeros(2)], s2)
    np.testing.assert_array_equal(p2[0], before)
    assert s2.step == 1
    assert np.all(np.abs(state.m[0]) < 0.5)


def test_adam_first_step_magnitude_is_lr():
    # Bias-corrected first step with gradient g moves by lr * |g|/(|g|+eps), sign -sign(g).
    g = np.array([0.3, -4.0])
    p = [np.zeros(2)]
    state = dc.adam_init(p, lr=0.01)
    dc.adam_step(p, [g.copy()], state)
    np.testing.assert_allclose(p[0], -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)
    assert np.all(np.sign(p[0]) == -np.sign(g))


def test_adam_ten_steps_on_quadratic_matches_hand_simulation():
    # Hand-stepped scalar oracle for f(x) = x^2 from x=1, lr=0.1.
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    x_hand, m, v = 1.0, 0.0, 0.0
    trace = []
    for t in range(1, 11):
        g = 2.0 * x_hand
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        x_hand -= lr * mh / (math.sqrt(vh) + eps)
        trace.append(x_hand)

    p = [np.array([1.0])]
    state = dc.adam_init(p, lr=lr, beta1=b1, beta2=b2, eps=eps)
    prev = 1.0
    for t in range(10):
        dc.adam_step(p, [np.array([2.0 * p[0][0]])], state)
        assert abs(p[0][0]) < abs(prev)
        assert abs(p[0][0] - trace[t]) < 1e-12
        prev = p[0][0]
    assert state.step == 10


def test_adam_nan_gradient_raises_and_preserves_params():
    p = [np.array([1.0, 2.0])]
    state = dc.adam_init(p)
    with pytest.raises(ContractViolation):
        dc.adam_step(p, [np.array([np.nan, 0.0])], state)
    np.testing.assert_array_equal(p[0], [1.0, 2.0])
    assert state.step == 0


# ---------------------------------------------------------------------------
# serialization


def test_param_stream_round_trip():
    rng = np.random.default_rng(13)
    named = [("enc.w0", rng.normal(size=(4, 3))), ("enc.b0", rng.normal(size=4)),
             ("head.w", rng.normal(size=(1, 4)))]
    blob = dc.dump_params(named)
    assert blob.startswith(b"diffcore-params v1\n3\n")
    loaded = dc.load_params(blob)
    assert [n for n, _ in loaded] == [n for n, _ in named]
    for (_, a), (_, b) in zip(named, loaded):
        assert np.array_equal(a, b)
        assert b.dtype == np.float64


def test_param_stream_is_little_endian_flat():
    arr = np.array([[1.0, 2.0], [3.0, 4.0]])
    blob = dc.dump_params([("w", arr)])
    body = blob[blob.index(b"\n\n") + 2:]
    assert body == arr.astype("<f8").tobytes()


def test_clip_grad_norm():
    grads = [np.array([3.0]), np.array([4.0])]
    clipped, norm = dc.clip_grad_norm(grads, 1.0)
    assert norm == 5.0
    total = math.sqrt(sum(float(np.sum(g * g)) for g in clipped))
    assert abs(total - 1.0) < 1e-12
    same, norm2 = dc.clip_grad_norm(grads, 10.0)
    assert norm2 == 5.0
    assert np.array_equal(same[0], grads[0])

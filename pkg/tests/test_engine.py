"""Gradient engine tests: op contracts, graph behavior, finite differences."""

import numpy as np
import pytest

from clip2mesh import engine as E
from clip2mesh.engine import Tensor


def rand_t(rng, shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


# -- softmax -------------------------------------------------------------------


def test_softmax_uniform_on_equal_logits():
    out = E.softmax(Tensor([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)


def test_softmax_single_element():
    out = E.softmax(Tensor([2.7]))
    np.testing.assert_allclose(out.data, [1.0], atol=0)


def test_softmax_shift_invariance():
    a = E.softmax(Tensor([1.0, 2.0])).data
    b = E.softmax(Tensor([101.0, 102.0])).data
    np.testing.assert_allclose(a, b, atol=1e-15)


def test_softmax_rows_sum_to_one_1000_trials():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        x = rng.standard_normal((3, 5)) * rng.uniform(0.1, 30)
        s = E.softmax(Tensor(x), axis=-1).data
        np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(s > 0) and np.all(s <= 1)


def test_softmax_values_strictly_inside_unit_interval():
    # strict (0,1) bounds hold whenever logit gaps stay within float64
    # rounding reach; extreme gaps round the winning entry to exactly 1.0
    rng = np.random.default_rng(8)
    for _ in range(200):
        s = E.softmax(Tensor(rng.standard_normal((4, 6)) * 5.0), axis=-1).data
        assert np.all(s > 0) and np.all(s < 1)


def test_softmax_rejects_nonfinite():
    with pytest.raises(ValueError, match="non-finite logits"):
        E.softmax(Tensor([1.0, np.nan]))
    with pytest.raises(ValueError, match="non-finite logits"):
        E.softmax(Tensor([1.0, np.inf]))


# -- layer norm ----------------------------------------------------------------


def test_layer_norm_two_point_row():
    x = Tensor([[1.0, 3.0]])
    out = E.layer_norm(x, Tensor([1.0, 1.0]), Tensor([0.0, 0.0]), eps=1e-12)
    np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-5)


def test_layer_norm_constant_row_is_zero():
    x = Tensor([[4.0, 4.0, 4.0]])
    out = E.layer_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=1e-12)
    np.testing.assert_allclose(out.data, 0.0, atol=1e-6)


def test_layer_norm_affine():
    x = Tensor([[1.0, 3.0]])
    out = E.layer_norm(x, Tensor([2.0, 2.0]), Tensor([1.0, 1.0]), eps=1e-12)
    np.testing.assert_allclose(out.data, [[-1.0, 3.0]], atol=1e-5)


def test_layer_norm_requires_positive_eps():
    with pytest.raises(ValueError):
        E.layer_norm(Tensor([[1.0, 3.0]]), Tensor([1.0, 1.0]),
                     Tensor([0.0, 0.0]), eps=0.0)


def test_layer_norm_shape_mismatch():
    with pytest.raises(ValueError):
        E.layer_norm(Tensor([[1.0, 3.0]]), Tensor([1.0]), Tensor([0.0]), eps=1e-6)


# -- attention -----------------------------------------------------------------


def _identity_weights(d):
    eye = np.eye(d)
    return (Tensor(eye, requires_grad=True), Tensor(eye, requires_grad=True),
            Tensor(eye, requires_grad=True), Tensor(eye, requires_grad=True))


def test_mha_single_token_passes_value_through():
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((1, 4)))
    wq, wk, wv, wo = _identity_weights(4)
    out = E.multi_head_attention(x, wq, wk, wv, wo, heads=2)
    np.testing.assert_allclose(out.data, x.data, atol=1e-12)


def test_mha_equal_values_yield_that_value():
    v = np.array([0.3, -1.2, 0.5, 2.0])
    x = Tensor(np.tile(v, (5, 1)))
    wq, wk, wv, wo = _identity_weights(4)
    out = E.multi_head_attention(x, wq, wk, wv, wo, heads=4)
    np.testing.assert_allclose(out.data, np.tile(v, (5, 1)), atol=1e-12)


def test_mha_two_token_hand_value():
    # one head, D=2, identity projections, x = I2: row 0 mixes value rows
    # with softmax([1,0]/sqrt(2)) weights; brute-force expectation inline.
    x = np.eye(2)
    s = x @ x.T / np.sqrt(2.0)
    e = np.exp(s - s.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    expected = p @ x
    wq, wk, wv, wo = _identity_weights(2)
    out = E.multi_head_attention(Tensor(x), wq, wk, wv, wo, heads=1)
    np.testing.assert_allclose(out.data, expected, atol=1e-12)
    np.testing.assert_allclose(out.data[0], [0.6698, 0.3302], atol=5e-5)


def test_mha_rejects_indivisible_heads():
    x = Tensor(np.zeros((2, 6)))
    wq, wk, wv, wo = _identity_weights(6)
    with pytest.raises(ValueError, match="divisible"):
        E.multi_head_attention(x, wq, wk, wv, wo, heads=4)


def test_mha_zero_output_projection_keeps_residual_identity():
    rng = np.random.default_rng(1)
    x = rand_t(rng, (3, 8))
    wq, wk, wv, _ = _identity_weights(8)
    wo = Tensor(np.zeros((8, 8)), requires_grad=True)
    out = E.multi_head_attention(x, wq, wk, wv, wo, heads=2)
    np.testing.assert_allclose(out.data, 0.0, atol=0)
    np.testing.assert_allclose((out + x).data, x.data, atol=0)


def test_mha_rows_are_convex_combinations_of_values():
    rng = np.random.default_rng(3)
    x = Tensor(rng.standard_normal((6, 4)))
    wq, wk, wv, wo = _identity_weights(4)
    out = E.multi_head_attention(x, wq, wk, wv, wo, heads=1).data
    lo = x.data.min(axis=0) - 1e-12
    hi = x.data.max(axis=0) + 1e-12
    assert np.all(out >= lo) and np.all(out <= hi)


# -- conv ------------------------------------------------------------------------


def test_conv2d_1x1_unit_kernel_is_identity():
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((5, 4, 1)))
    w = Tensor(np.ones((1, 1, 1, 1)))
    out = E.conv2d(x, w)
    np.testing.assert_allclose(out.data, x.data, atol=0)


def test_conv2d_zero_input_gives_zero():
    w = Tensor(np.random.default_rng(0).standard_normal((3, 3, 2, 4)))
    out = E.conv2d(Tensor(np.zeros((6, 6, 2))), w)
    np.testing.assert_allclose(out.data, 0.0, atol=0)


def test_conv2d_block_mean():
    # 4x4 input, 2x2 mean kernel, stride 2 -> 2x2 block means (verified by
    # direct summation)
    x = np.arange(16, dtype=np.float64).reshape(4, 4, 1)
    w = Tensor(np.full((2, 2, 1, 1), 0.25))
    out = E.conv2d(Tensor(x), w, stride=2).data[..., 0]
    expected = np.array([[x[0:2, 0:2].mean(), x[0:2, 2:4].mean()],
                         [x[2:4, 0:2].mean(), x[2:4, 2:4].mean()]])
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_conv2d_output_size_formula():
    x = Tensor(np.zeros((11, 9, 1)))
    w = Tensor(np.zeros((3, 2, 1, 1)))
    out = E.conv2d(x, w, stride=(2, 3))
    assert out.shape == ((11 - 3) // 2 + 1, (9 - 2) // 3 + 1, 1)


def test_conv2d_kernel_larger_than_input_errors():
    with pytest.raises(ValueError, match="larger"):
        E.conv2d(Tensor(np.zeros((2, 2, 1))), Tensor(np.zeros((3, 3, 1, 1))))


def test_conv3d_1x1x1_identity_and_linearity():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3, 4, 4, 1))
    w = Tensor(np.ones((1, 1, 1, 1, 1)))
    out = E.conv3d(Tensor(x), w)
    np.testing.assert_allclose(out.data, x, atol=0)
    out2 = E.conv3d(Tensor(2.0 * x), w)
    np.testing.assert_allclose(out2.data, 2.0 * out.data, atol=0)


def test_conv3d_block_mean():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 4, 4, 1))
    w = Tensor(np.full((2, 2, 2, 1, 1), 1 / 8))
    out = E.conv3d(Tensor(x), w, stride=2).data
    np.testing.assert_allclose(out[0, 0, 0, 0], x[0:2, 0:2, 0:2, 0].mean(), atol=1e-12)


# -- graph / backward -------------------------------------------------------------


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6, dtype=np.float64).reshape(2, 3), requires_grad=True)
    x.sum().backward()
    np.testing.assert_allclose(x.grad, np.ones((2, 3)), atol=0)


def test_backward_square():
    x = Tensor(3.0, requires_grad=True)
    (x * x).backward()
    np.testing.assert_allclose(x.grad, 6.0, atol=0)


def test_backward_rejects_nonscalar():
    x = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        E.backward(x + x)


def test_backward_accumulates_at_fanout():
    x = Tensor(2.0, requires_grad=True)
    y = x * 3.0 + x * 5.0
    y.backward()
    np.testing.assert_allclose(x.grad, 8.0, atol=0)


def test_gradients_zero_for_unreachable_params():
    x = Tensor(1.0, requires_grad=True)
    unused = Tensor(np.zeros((2, 2)), requires_grad=True)
    grads = E.gradients(x * x, [x, unused])
    np.testing.assert_allclose(grads[0], 2.0)
    np.testing.assert_allclose(grads[1], 0.0)


def test_compute_graph_is_topological_and_visits_once():
    x = Tensor(1.0, requires_grad=True)
    y = x * 2.0
    z = y + y * 3.0
    graph = E.ComputeGraph.trace(z)
    seen = set()
    pos = {}
    for i, rec in enumerate(graph.records):
        assert id(rec.output) not in seen
        seen.add(id(rec.output))
        pos[id(rec.output)] = i
        for j in rec.inputs:
            assert j < i  # parents precede children
    assert pos[id(z)] == len(graph.records) - 1


def test_two_layer_mlp_matches_finite_differences():
    rng = np.random.default_rng(11)
    w1 = rand_t(rng, (4, 8))
    b1 = rand_t(rng, (8,), 0.1)
    w2 = rand_t(rng, (8, 1))
    x = Tensor(rng.standard_normal((5, 4)))
    t = Tensor(rng.standard_normal((5, 1)))

    def loss():
        h = E.gelu(x @ w1 + b1)
        d = h @ w2 - t
        return (d * d).mean()

    err = E.finite_diff_check(loss, [w1, b1, w2], eps=1e-5, max_coords=12)
    assert err < 1e-6


# -- per-op finite-difference battery ------------------------------------------


def _fd(build, params, tol=1e-6, eps=1e-5):
    err = E.finite_diff_check(build, params, eps=eps, max_coords=10)
    assert err < tol, f"fd error {err}"


def test_fd_arithmetic_ops():
    rng = np.random.default_rng(21)
    a = rand_t(rng, (3, 4))
    b = rand_t(rng, (3, 4))
    c = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
    _fd(lambda: ((a * b + a - b) / c).sum(), [a, b, c])
    _fd(lambda: (a ** 3.0).sum(), [a])


def test_fd_elementwise_ops():
    rng = np.random.default_rng(22)
    a = rand_t(rng, (4, 3), 0.8)
    pos = Tensor(rng.uniform(0.5, 2.0, (4, 3)), requires_grad=True)
    _fd(lambda: E.texp(a).sum(), [a])
    _fd(lambda: E.tlog(pos).sum(), [pos])
    _fd(lambda: E.tsqrt(pos).sum(), [pos])
    _fd(lambda: E.tanh(a).sum(), [a])
    _fd(lambda: E.sigmoid(a).sum(), [a])
    _fd(lambda: E.gelu(a).sum(), [a])
    _fd(lambda: (E.tabs(a) * a).sum(), [a])


def test_fd_reductions_and_shapes():
    rng = np.random.default_rng(23)
    a = rand_t(rng, (3, 4, 2))
    _fd(lambda: (a.mean(axis=1).sum()), [a])
    _fd(lambda: E.tmin(a, axis=1).sum(), [a])
    _fd(lambda: a.reshape(6, 4).transpose()[1:3].sum(), [a])
    w = rand_t(rng, (2, 5))
    _fd(lambda: E.concat([a.reshape(12, 2) @ w, a.reshape(12, 2) @ w * 2.0], axis=1).sum(), [a, w])
    _fd(lambda: E.pad(a, [(1, 1), (0, 0), (2, 0)]).sum(), [a])
    idx = np.array([0, 2, 2, 1])
    _fd(lambda: E.index_take(a, idx, axis=0).sum(), [a])


def test_fd_matmul_batched():
    rng = np.random.default_rng(24)
    a = rand_t(rng, (2, 3, 4))
    b = rand_t(rng, (4, 5))
    _fd(lambda: (a @ b).sum(), [a, b])
    c = rand_t(rng, (2, 5, 3))
    _fd(lambda: (c @ a).sum(), [a, c])


def test_fd_softmax_layernorm_attention():
    rng = np.random.default_rng(25)
    x = rand_t(rng, (4, 6))
    g = rand_t(rng, (6,), 0.5)
    b = rand_t(rng, (6,), 0.5)
    tgt = np.zeros((4, 6))
    tgt[:, 0] = 1.0
    _fd(lambda: (E.softmax(x, axis=-1) * Tensor(tgt)).sum(), [x])
    _fd(lambda: (E.layer_norm(x, g, b, 1e-5) ** 2.0).sum(), [x, g, b])
    ws = [rand_t(rng, (6, 6)) for _ in range(4)]
    _fd(lambda: E.multi_head_attention(x, *ws, heads=2).sum(), [x] + ws, tol=1e-5)


def test_fd_softmax_cross_entropy_two_eps_agree():
    rng = np.random.default_rng(26)
    x = rand_t(rng, (3, 5))
    onehot = np.eye(5)[[0, 3, 2]]

    def loss():
        p = E.softmax(x, axis=-1)
        return -(Tensor(onehot) * E.tlog(p)).sum()

    e1 = E.finite_diff_check(loss, [x], eps=1e-5, max_coords=15)
    e2 = E.finite_diff_check(loss, [x], eps=1e-4, max_coords=15)
    assert e1 < 1e-6 and e2 < 1e-6


def test_fd_conv_ops():
    rng = np.random.default_rng(27)
    x = rand_t(rng, (6, 5, 2))
    w = rand_t(rng, (3, 2, 2, 3))
    _fd(lambda: (E.conv2d(x, w, stride=(2, 1)) ** 2.0).sum(), [x, w])
    x3 = rand_t(rng, (4, 5, 5, 2))
    w3 = rand_t(rng, (3, 3, 3, 2, 2))
    _fd(lambda: (E.conv3d(x3, w3, stride=(1, 2, 2)) ** 2.0).sum(), [x3, w3])


def test_fd_grid_sample():
    rng = np.random.default_rng(28)
    feat = rand_t(rng, (5, 6, 3))
    uv = rng.uniform(-1.0, 7.0, (10, 2))
    _fd(lambda: (E.grid_sample(feat, uv) ** 2.0).sum(), [feat])


def test_fd_linear_function_is_nearly_exact():
    rng = np.random.default_rng(29)
    a = rand_t(rng, (5,))
    c = Tensor(rng.standard_normal(5))
    err = E.finite_diff_check(lambda: (a * c).sum(), [a], eps=1e-5, max_coords=5)
    assert err < 1e-10


def test_fd_negative_control_detects_wrong_gradient():
    # custom op with an intentionally wrong backward: y = x^2 but grad 3x
    x = Tensor(1.5, requires_grad=True)

    def bad_square(t):
        out = t.data * t.data

        def bwd(g):
            E._accum(t, g * 3.0 * t.data)

        return E.Tensor(out, requires_grad=True, op="bad_square",
                        parents=(t,), backward=bwd)

    err = E.finite_diff_check(lambda: bad_square(x), [x], eps=1e-5)
    assert err > 1e-2


def test_fd_rejects_bad_eps_and_nondeterminism():
    x = Tensor(1.0, requires_grad=True)
    with pytest.raises(ValueError, match="eps"):
        E.finite_diff_check(lambda: x * x, [x], eps=1e-2)
    state = {"n": 0.0}

    def jitter():
        state["n"] += 1.0
        return x * state["n"]

    with pytest.raises(ValueError, match="non-deterministic"):
        E.finite_diff_check(jitter, [x], eps=1e-5)


# -- determinism / no_grad ---------------------------------------------------------


def test_forward_ops_are_deterministic():
    rng = np.random.default_rng(31)
    x = rng.standard_normal((8, 8))
    a = E.gelu(E.softmax(Tensor(x), axis=-1)).data
    b = E.gelu(E.softmax(Tensor(x.copy()), axis=-1)).data
    assert np.array_equal(a, b)


def test_no_grad_skips_graph():
    x = Tensor(2.0, requires_grad=True)
    with E.no_grad():
        y = x * x
    assert not y.requires_grad and y._backward is None


def test_values_finite_after_forward_ops_on_finite_inputs():
    rng = np.random.default_rng(32)
    x = Tensor(rng.standard_normal((16, 16)) * 10)
    out = E.multi_head_attention(
        E.layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16)), 1e-6),
        *(Tensor(rng.standard_normal((16, 16)) * 0.3) for _ in range(4)), heads=4)
    assert np.all(np.isfinite(out.data))

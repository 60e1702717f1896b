import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fdd import substrate as sb
from fdd.errors import DimensionError, InputError, NumericalError
from gradcheck import check

TOL = 1e-4


def away_from_zero(rng, shape, margin=0.05):
    x = rng.uniform(-1, 1, size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_conv2d_gradients(rng, stride, padding):
    x = rng.standard_normal((2, 3, 7, 6))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    errs = check(lambda x, w, b: sb.conv2d(x, w, b, stride, padding), [x, w, b], rng)
    assert max(errs) < TOL


@pytest.mark.parametrize("stride,padding,op", [(1, 0, 0), (2, 1, 1), (2, 1, 0), (2, 0, 1)])
def test_conv2d_transpose_gradients(rng, stride, padding, op):
    x = rng.standard_normal((2, 3, 4, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(2)
    errs = check(lambda x, w, b: sb.conv2d_transpose(x, w, b, stride, padding, op), [x, w, b], rng)
    assert max(errs) < TOL


def test_linear_gradients(rng):
    x, w, b = rng.standard_normal((5, 4)), rng.standard_normal((3, 4)), rng.standard_normal(3)
    assert max(check(sb.linear, [x, w, b], rng)) < TOL


def test_relu_gradients(rng):
    assert check(sb.relu, [away_from_zero(rng, (3, 4, 2))], rng)[0] < TOL


def test_tanh_gradients(rng):
    assert check(sb.tanh, [rng.standard_normal((3, 5))], rng)[0] < TOL


def test_reshape_and_flatten_gradients(rng):
    x = rng.standard_normal((2, 3, 4))
    assert check(lambda t: sb.reshape(t, (6, 4)), [x], rng)[0] < TOL
    assert check(sb.flatten, [x], rng)[0] < TOL


def test_mse_gradients_both_arguments(rng):
    x, y = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    assert max(check(sb.mse_loss, [x, y], rng)) < TOL


def test_composite_network_gradients(rng):
    x = away_from_zero(rng, (2, 1, 8, 8))
    w1 = rng.standard_normal((3, 1, 3, 3)) * 0.5
    w2 = rng.standard_normal((5, 48)) * 0.2

    def net(x, w1, w2):
        h = sb.relu(sb.conv2d(x, w1, None, 2, 1))
        return sb.tanh(sb.linear(sb.flatten(h), w2))

    assert max(check(net, [x, w1, w2], rng)) < TOL


def test_transpose_is_adjoint_of_conv(rng):
    # <conv(x), y> == <x, conv_transpose(y)> with shared weights
    x = rng.standard_normal((2, 3, 9, 9))
    w = rng.standard_normal((4, 3, 3, 3))
    y_shape = sb.conv2d(sb.Tensor(x), sb.Tensor(w), None, 2, 1).shape
    y = rng.standard_normal(y_shape)
    lhs = np.sum(sb.conv2d(sb.Tensor(x), sb.Tensor(w), None, 2, 1).data * y)
    rhs = np.sum(x * sb.conv2d_transpose(sb.Tensor(y), sb.Tensor(w), None, 2, 1, 0).data)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_conv_matches_direct_loop(rng):
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    out = sb.conv2d(sb.Tensor(x), sb.Tensor(w), None, 2, 1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(out)
    for f in range(3):
        for i in range(out.shape[2]):
            for j in range(out.shape[3]):
                ref[0, f, i, j] = np.sum(xp[0, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[f])
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_conv_output_size_formula():
    sizes = [299]
    for _ in range(5):
        sizes.append(sb.conv_output_size(sizes[-1], 3, 2, 1))
    assert sizes == [299, 150, 75, 38, 19, 10]


def test_conv_shape_errors():
    with pytest.raises(DimensionError):
        sb.conv2d(sb.Tensor(np.zeros((1, 2, 5, 5))), sb.Tensor(np.zeros((3, 4, 3, 3))))


def test_ops_keep_input_dtype():
    x = sb.Tensor(np.ones((1, 1, 4, 4), dtype=np.float32))
    w = sb.Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
    assert sb.conv2d(x, w, None, 1, 1).dtype == np.float32
    assert sb.tanh(x).dtype == np.float32


def test_fan_out_accumulates(rng):
    x = rng.standard_normal((3, 3))

    def twice(t):
        return sb.mse_loss(sb.tanh(t), sb.relu(t))

    assert check(twice, [np.where(np.abs(x) < 0.05, 0.1, x)], rng)[0] < TOL


def test_unreached_tensor_gets_zero_gradient():
    a = sb.Tensor(np.ones(3), requires_grad=True)
    b = sb.Tensor(np.ones(3), requires_grad=True)
    with sb.Tape() as tape:
        out = sb.tanh(a)
    tape.backward(out)
    assert np.all(tape.grad(b) == 0)


def test_no_tape_means_no_records():
    a = sb.Tensor(np.ones(3), requires_grad=True)
    assert not sb.tanh(a).requires_grad


def test_seed_gradient_shape_checked():
    a = sb.Tensor(np.ones(3), requires_grad=True)
    with sb.Tape() as tape:
        out = sb.tanh(a)
    with pytest.raises(DimensionError):
        tape.backward(out, np.ones(4))


def test_default_dtype_controls_init():
    old = sb.get_default_dtype()
    try:
        sb.set_default_dtype(np.float64)
        assert sb.glorot_uniform(np.random.default_rng(0), (3, 3), 3, 3).dtype == np.float64
        with pytest.raises(InputError):
            sb.set_default_dtype(np.int32)
    finally:
        sb.set_default_dtype(old)


@given(st.integers(1, 50), st.integers(1, 50), st.integers(0, 10 ** 6))
@settings(max_examples=30, deadline=None)
def test_glorot_within_limit(fan_in, fan_out, seed):
    w = sb.glorot_uniform(np.random.default_rng(seed), (fan_out, fan_in), fan_in, fan_out,
                          np.float64)
    assert np.max(np.abs(w)) <= np.sqrt(6.0 / (fan_in + fan_out))


def _block(rng, dtype=np.float64):
    p = sb.ParameterBlock()
    p.add("a", rng.standard_normal((3, 2)).astype(dtype), rng.standard_normal(3).astype(dtype))
    return p


def test_adam_matches_reference(rng):
    params = _block(rng)
    w0 = params["a"][0].data.copy()
    m = np.zeros_like(w0)
    v = np.zeros_like(w0)
    lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
    for t in range(1, 4):
        g = rng.standard_normal(w0.shape)
        sb.adam_step(params, {"a.weight": g}, lr=lr)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w0 = w0 - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    np.testing.assert_allclose(params["a"][0].data, w0, rtol=1e-12, atol=1e-14)
    assert params.step == 3


def test_adam_first_step_moves_by_lr(rng):
    params = _block(rng)
    w0 = params["a"][0].data.copy()
    g = rng.standard_normal(w0.shape)
    sb.adam_step(params, {"a.weight": g}, lr=1e-3)
    np.testing.assert_allclose(np.abs(params["a"][0].data - w0), 1e-3, rtol=1e-4)


def test_adam_rejects_nan_without_side_effects(rng):
    params = _block(rng)
    before = params.state()
    g = np.full((3, 2), np.nan)
    with pytest.raises(NumericalError):
        sb.adam_step(params, {"a.weight": g})
    assert params.step == 0 and not params.has_moments
    np.testing.assert_array_equal(params["a"][0].data, before["p:a.weight"])


def test_adam_rejects_bad_keys_and_shapes(rng):
    params = _block(rng)
    with pytest.raises(DimensionError):
        sb.adam_step(params, {"b.weight": np.zeros((3, 2))})
    with pytest.raises(DimensionError):
        sb.adam_step(params, {"a.weight": np.zeros((2, 3))})


def test_state_snapshot_round_trip(rng):
    params = _block(rng)
    sb.adam_step(params, {"a.weight": np.ones((3, 2))})
    snap = params.state()
    sb.adam_step(params, {"a.weight": np.ones((3, 2))})
    params.load_state(snap)
    assert params.step == 1
    np.testing.assert_array_equal(params["a"][0].data, snap["p:a.weight"])
    np.testing.assert_array_equal(params.m["a.weight"], snap["m:a.weight"])

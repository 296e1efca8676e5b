"""Autodiff op semantics and gradients against finite differences."""

import numpy as np
import pytest

from chansr import autodiff as ad
from chansr.autodiff import Tensor

from oracles import finite_difference, pool_channel_oracle, pool_spatial_oracle, relative_error


def _grad_check(build_loss, arrays, tol=1e-5, step=1e-3):
    """build_loss(tensors) -> scalar Tensor; arrays are float64 leaves."""
    tensors = [Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
    loss = build_loss(tensors)
    ad.backward(loss)
    analytic = [t.grad.copy() for t in tensors]

    views = [t.data for t in tensors]
    numeric = finite_difference(lambda: build_loss(tensors).item(), views, step=step)
    for a, n in zip(analytic, numeric):
        assert relative_error(a, n, floor=1e-6) < tol


def test_relu_sign_cases():
    out = ad.relu(Tensor([-1.0, 0.0, 2.0]))
    assert np.array_equal(out.data, np.array([0.0, 0.0, 2.0], np.float32))


def test_relu_derivative_at_zero_is_zero():
    x = Tensor([-1.0, 0.0, 2.0], requires_grad=True)
    ad.backward(ad.tensor_sum(ad.relu(x)))
    assert np.array_equal(x.grad, np.array([0.0, 0.0, 1.0], np.float32))


def test_sigmoid_at_zero():
    assert ad.sigmoid(Tensor([0.0])).data[0] == pytest.approx(0.5)


def test_sigmoid_extreme_inputs_are_finite():
    out = ad.sigmoid(Tensor([-1e4, 1e4], dtype=np.float64))
    assert np.all(np.isfinite(out.data))
    assert out.data[0] == pytest.approx(0.0, abs=1e-30)
    assert out.data[1] == pytest.approx(1.0)


def test_scale_channels_constant_input():
    x = Tensor(np.ones((2, 2, 2)))
    g = Tensor(np.array([0.5, 2.0]))
    out = ad.scale_channels(x, g)
    assert np.allclose(out.data[0], 0.5)
    assert np.allclose(out.data[1], 2.0)


def test_pool_spatial_avg_constant():
    x = Tensor(np.full((3, 4, 5), 2.5))
    assert np.allclose(ad.pool_spatial(x, "avg").data, 2.5)


def test_pool_channel_max_two_elements():
    x = Tensor(np.array([3.0, 7.0]).reshape(2, 1, 1))
    assert ad.pool_channel(x, "max").data.reshape(()) == pytest.approx(7.0)


def test_pool_reductions_match_loop_oracle():
    rng = np.random.default_rng(3)
    for _ in range(25):
        x = rng.standard_normal((3, 4, 5))
        for kind in ("max", "avg"):
            got = ad.pool_spatial(Tensor(x, dtype=np.float64), kind).data
            assert np.allclose(got, pool_spatial_oracle(x, kind))
            got = ad.pool_channel(Tensor(x, dtype=np.float64), kind).data
            assert np.allclose(got, pool_channel_oracle(x, kind))


def test_max_pool_gradient_goes_to_first_max_row_major():
    x = Tensor(np.array([[[1.0, 5.0], [5.0, 0.0]]]), requires_grad=True)
    ad.backward(ad.tensor_sum(ad.pool_spatial(x, "max")))
    assert np.array_equal(x.grad, np.array([[[0.0, 1.0], [0.0, 0.0]]], np.float32))
    x = Tensor(np.array([2.0, 2.0]).reshape(2, 1, 1), requires_grad=True)
    ad.backward(ad.tensor_sum(ad.pool_channel(x, "max")))
    assert np.array_equal(x.grad.reshape(2), np.array([1.0, 0.0], np.float32))


def test_mse_trivial_cases():
    p = Tensor(np.zeros((2, 3)))
    assert ad.mse_loss(p, Tensor(np.zeros((2, 3)))).item() == 0.0
    pred = Tensor(np.array([[1.0, 0.0]]))
    target = Tensor(np.array([[0.0, 0.0]]))
    assert ad.mse_loss(pred, target).item() == pytest.approx(1.0)


def test_mse_matches_hand_sum():
    rng = np.random.default_rng(4)
    p = rng.standard_normal((2, 3, 4))
    t = rng.standard_normal((2, 3, 4))
    want = np.mean([np.sum((p[i] - t[i]) ** 2) for i in range(2)])
    got = ad.mse_loss(Tensor(p, dtype=np.float64), Tensor(t, dtype=np.float64)).item()
    assert got == pytest.approx(want, rel=1e-6)


def test_mse_shape_mismatch_errors():
    with pytest.raises(ValueError):
        ad.mse_loss(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))


def test_backward_of_sum_is_ones():
    x = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
    ad.backward(ad.tensor_sum(x))
    assert np.array_equal(x.grad, np.ones((3, 4), np.float32))


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        ad.backward(x + x)


def test_unreached_parameter_grad_stays_zero():
    used = Tensor(np.ones(2), requires_grad=True)
    unused = Tensor(np.ones(2), requires_grad=True)
    ad.backward(ad.tensor_sum(used * used))
    assert np.array_equal(unused.grad, np.zeros(2, np.float32))


def test_repeated_backward_accumulates_on_leaves():
    x = Tensor(np.array([3.0]), requires_grad=True)
    loss = ad.tensor_sum(x * x)
    ad.backward(loss)
    first = x.grad.copy()
    ad.backward(loss)
    assert np.allclose(x.grad, 2 * first)


def test_backward_linearity():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((3, 3))
    x1 = Tensor(a, requires_grad=True, dtype=np.float64)
    l1 = ad.tensor_sum(x1 * x1)
    l2 = ad.tensor_sum(ad.relu(x1))
    ad.backward(ad.add(l1, l2))
    combined = x1.grad.copy()
    x2 = Tensor(a, requires_grad=True, dtype=np.float64)
    ad.backward(ad.tensor_sum(x2 * x2))
    g1 = x2.grad.copy()
    x3 = Tensor(a, requires_grad=True, dtype=np.float64)
    ad.backward(ad.tensor_sum(ad.relu(x3)))
    g2 = x3.grad.copy()
    assert np.max(np.abs(combined - (g1 + g2))) < 1e-12


def test_dtype_mismatch_raises():
    a = Tensor(np.ones(2), dtype=np.float32)
    b = Tensor(np.ones(2), dtype=np.float64)
    with pytest.raises(TypeError):
        ad.add(a, b)


def test_conv2d_identity_kernel_is_exact():
    rng = np.random.default_rng(6)
    x = Tensor(rng.standard_normal((1, 5, 4)).astype(np.float32))
    w = Tensor(np.ones((1, 1, 1, 1), np.float32))
    b = Tensor(np.zeros(1, np.float32))
    out = ad.conv2d(x, w, b)
    assert np.array_equal(out.data, x.data)


def test_conv2d_zero_input_gives_bias():
    x = Tensor(np.zeros((2, 3, 4)))
    w = Tensor(np.ones((3, 2, 3, 3)) * 0.7)
    b = Tensor(np.array([1.0, -2.0, 0.5]))
    out = ad.conv2d(x, w, b)
    for c, v in enumerate([1.0, -2.0, 0.5]):
        assert np.allclose(out.data[c], v)


def test_conv2d_transpose_single_pixel():
    v = 1.75
    x = Tensor(np.full((1, 1, 1), v))
    k = np.arange(6.0).reshape(1, 1, 2, 3)
    out = ad.conv2d_transpose(x, Tensor(k), Tensor(np.zeros(1)), (1, 1))
    assert np.allclose(out.data, v * k[0])


def test_conv2d_transpose_lattice_shape():
    x = Tensor(np.zeros((2, 15, 6)))
    w = Tensor(np.zeros((2, 2, 9, 5)))
    out = ad.conv2d_transpose(x, w, Tensor(np.zeros(2)), (9, 5))
    assert out.data.shape == (2, 135, 30)


def test_crop2d_and_gradient():
    x = Tensor(np.arange(24.0).reshape(1, 4, 6), requires_grad=True)
    out = ad.crop2d(x, 2, 3)
    assert np.array_equal(out.data, x.data[:, :2, :3])
    ad.backward(ad.tensor_sum(out))
    want = np.zeros((1, 4, 6), np.float32)
    want[:, :2, :3] = 1
    assert np.array_equal(x.grad, want)
    with pytest.raises(ValueError):
        ad.crop2d(x, 5, 3)


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        out = ad.tensor_sum(ad.relu(x))
    assert not out.requires_grad
    assert out._parents == ()


# gradient checks, one per op family, all in 64-bit


def test_grad_elementwise_ops():
    rng = np.random.default_rng(20)
    a = rng.standard_normal((2, 3))
    b = rng.standard_normal((2, 3))
    _grad_check(lambda ts: ad.tensor_sum(ad.mul_elementwise(ad.add(ts[0], ts[1]), ts[0])), [a, b])
    _grad_check(lambda ts: ad.tensor_sum(ad.sigmoid(ts[0])), [a])
    _grad_check(lambda ts: ad.tensor_mean(ad.mul_elementwise(ts[0], ts[0])), [a])
    # offset keeps every entry away from relu's kink so differences stay clean
    _grad_check(lambda ts: ad.tensor_sum(ad.relu(ts[0])), [a + np.sign(a) * 0.5])


def test_grad_broadcast_mul():
    rng = np.random.default_rng(21)
    x = rng.standard_normal((2, 3, 4))
    s = rng.standard_normal((1, 3, 4))
    _grad_check(lambda ts: ad.tensor_sum(ad.mul_elementwise(ts[0], ts[1])), [x, s])


def test_grad_conv2d():
    rng = np.random.default_rng(22)
    x = rng.standard_normal((1, 2, 5, 4))
    w = rng.standard_normal((2, 2, 3, 3))
    b = rng.standard_normal(2)
    _grad_check(lambda ts: ad.tensor_sum(ad.conv2d(ts[0], ts[1], ts[2])), [x, w, b])


def test_grad_conv2d_transpose():
    rng = np.random.default_rng(23)
    x = rng.standard_normal((1, 2, 3, 2))
    w = rng.standard_normal((2, 2, 3, 2))
    b = rng.standard_normal(2)
    _grad_check(lambda ts: ad.tensor_sum(ad.conv2d_transpose(ts[0], ts[1], ts[2], (3, 2))), [x, w, b])


def test_grad_pools_and_gates():
    rng = np.random.default_rng(24)
    x = rng.standard_normal((2, 3, 4)) * 2
    g = rng.standard_normal(2)
    _grad_check(lambda ts: ad.tensor_sum(ad.pool_spatial(ts[0], "avg")), [x])
    _grad_check(lambda ts: ad.tensor_sum(ad.pool_spatial(ts[0], "max")), [x])
    _grad_check(lambda ts: ad.tensor_sum(ad.pool_channel(ts[0], "avg")), [x])
    _grad_check(lambda ts: ad.tensor_sum(ad.pool_channel(ts[0], "max")), [x])
    _grad_check(lambda ts: ad.tensor_sum(ad.scale_channels(ts[0], ts[1])), [x, g])
    _grad_check(lambda ts: ad.tensor_sum(ad.concat_channels(ts[0], ad.relu(ts[0]))), [x + np.sign(x) * 0.5])


def test_grad_mse_sigmoid_chain():
    # loss = mse(sigmoid(w * x), y) on tiny dims, against central differences
    rng = np.random.default_rng(25)
    w = rng.standard_normal((1, 4))
    x = rng.standard_normal((3, 4))
    y = rng.standard_normal((3, 4))

    def build(ts):
        pred = ad.sigmoid(ad.mul_elementwise(ts[1], ts[0]))
        return ad.mse_loss(pred, Tensor(y, dtype=np.float64))

    _grad_check(build, [w, x])

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from insensor_snn.numerics import (
    SGD,
    DimensionError,
    ParameterError,
    clip_grad_norm,
    ShapeInfo,
    Tensor,
    TrainingError,
    batchnorm_backward,
    batchnorm_infer,
    batchnorm_train,
    bn_affine,
    conv2d,
    conv2d_backward,
    dense,
    dense_backward,
    deterministic,
    maxpool2d,
    maxpool2d_backward,
    sgd_step,
    softmax_cross_entropy,
)
from oracles import central_difference, conv2d_loops, maxpool_loops, rel_error


# ----------------------------------------------------------------- types

def test_tensor_casts_to_float32_and_checks_grad_shape():
    t = Tensor(np.arange(6).reshape(2, 3))
    assert t.data.dtype == np.float32
    assert t.data.size == math.prod(t.shape)
    with pytest.raises(DimensionError):
        Tensor(np.zeros(3), grad=np.zeros(4))


def test_tensor_accumulate():
    t = Tensor(np.zeros(3))
    t.accumulate(np.ones(3))
    t.accumulate(np.ones(3))
    np.testing.assert_array_equal(t.grad, [2, 2, 2])
    with pytest.raises(DimensionError):
        t.accumulate(np.ones(2))


def test_shape_info_rejects_zero():
    assert ShapeInfo(2, 3, 4).volume == 24
    with pytest.raises(ParameterError):
        ShapeInfo(0, 3, 4)


# ------------------------------------------------------------------ conv

def test_conv_scalar():
    out = conv2d(np.array([[[2.0]]]), np.array([[[[3.0]]]]))
    np.testing.assert_array_equal(out, [[[6.0]]])


def test_conv_identity_kernel():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1, 5, 7)).astype(np.float32)
    w = np.zeros((1, 1, 3, 3), dtype=np.float32)
    w[0, 0, 1, 1] = 1
    np.testing.assert_array_equal(conv2d(x, w, padding=1), x)


def test_conv_matches_loop_oracle():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 8, 8)).astype(np.float32)
    w = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
    out = conv2d(x, w, stride=2)
    ref = conv2d_loops(x, w, stride=2)
    assert out.shape == (4, 3, 3)
    assert np.abs(out - ref).max() < 1e-5


@settings(max_examples=25, deadline=None)
@given(h=st.integers(3, 9), w=st.integers(3, 9), k=st.integers(1, 3), stride=st.integers(1, 3),
       pad=st.integers(0, 2), seed=st.integers(0, 2 ** 16))
def test_conv_matches_loop_oracle_random_geometry(h, w, k, stride, pad, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, h, w)).astype(np.float32)
    wt = rng.normal(size=(3, 2, k, k)).astype(np.float32)
    out = conv2d(x, wt, stride, pad)
    ref = conv2d_loops(x, wt, stride, pad)
    assert out.shape == ref.shape == (3, (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1)
    assert np.abs(out - ref).max() < 1e-4


def test_conv_channel_mismatch():
    with pytest.raises(DimensionError):
        conv2d(np.zeros((2, 4, 4)), np.zeros((1, 3, 3, 3)))
    with pytest.raises(DimensionError):
        conv2d(np.zeros((1, 2, 2)), np.zeros((1, 1, 3, 3)))


def test_conv_backward_zero_and_scalar():
    x = np.array([[[2.0]]])
    w = np.array([[[[3.0]]]])
    gx, gw = conv2d_backward(np.zeros((1, 1, 1)), x, w)
    assert not gx.any() and not gw.any()
    gx, gw = conv2d_backward(np.ones((1, 1, 1)), x, w)
    assert gx.item() == 3.0 and gw.item() == 2.0


def test_conv_backward_shape_check():
    with pytest.raises(DimensionError):
        conv2d_backward(np.ones((1, 3, 3)), np.ones((1, 4, 4)), np.ones((1, 1, 3, 3)))


@pytest.mark.parametrize("stride,pad", [(1, 0), (2, 1), (1, 1)])
def test_conv_backward_finite_differences(stride, pad):
    rng = np.random.default_rng(stride * 10 + pad)
    x = rng.normal(size=(2, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    r = rng.normal(size=conv2d(x, w, stride, pad).shape)
    gx, gw = conv2d_backward(r, x, w, stride, pad)
    f = lambda: float((conv2d(x, w, stride, pad) * r).sum())
    assert rel_error(gx, central_difference(f, x)) < 1e-6
    assert rel_error(gw, central_difference(f, w)) < 1e-6


# ------------------------------------------------------------------ pool

def test_pool_examples():
    assert maxpool2d(np.array([[[1.0, 2.0], [3.0, 4.0]]]), 2).tolist() == [[[4.0]]]
    np.testing.assert_array_equal(maxpool2d(np.full((2, 4, 4), 7.0), 2), np.full((2, 2, 2), 7.0))


def test_pool_matches_loop_oracle():
    x = np.random.default_rng(2).normal(size=(1, 6, 6))
    np.testing.assert_array_equal(maxpool2d(x, 2, 2), maxpool_loops(x, 2, 2))
    np.testing.assert_array_equal(maxpool2d(x, 3, 1), maxpool_loops(x, 3, 1))


def test_pool_window_too_large():
    with pytest.raises(DimensionError):
        maxpool2d(np.zeros((1, 2, 2)), 3)


def test_pool_backward_ties_go_to_first_max():
    x = np.ones((1, 2, 2))
    g = maxpool2d_backward(np.array([[[5.0]]]), x, 2)
    np.testing.assert_array_equal(g, [[[5.0, 0.0], [0.0, 0.0]]])
    x = np.array([[[0.0, 3.0], [3.0, 1.0]]])
    g = maxpool2d_backward(np.array([[[1.0]]]), x, 2)
    np.testing.assert_array_equal(g, [[[0.0, 1.0], [0.0, 0.0]]])


def test_pool_backward_finite_differences():
    rng = np.random.default_rng(3)
    x = rng.permutation(72).reshape(2, 1, 6, 6).astype(np.float64)  # distinct values
    r = rng.normal(size=(2, 1, 3, 3))
    g = maxpool2d_backward(r, x, 2)
    f = lambda: float((maxpool2d(x, 2) * r).sum())
    assert rel_error(g, central_difference(f, x, eps=1e-3)) < 1e-9


# ------------------------------------------------------------ batch norm

def test_bn_infer_identity_and_hand_values():
    x = np.random.default_rng(4).normal(size=(2, 3, 4, 4))
    eps = 1e-5
    y = batchnorm_infer(x, np.ones(3), np.zeros(3), np.zeros(3), np.full(3, 1 - eps), eps)
    np.testing.assert_allclose(y, x, atol=1e-12)
    a, b = bn_affine([2.0], [1.0], [0.5], [0.25], eps=1e-12)
    assert a[0] == pytest.approx(4.0) and b[0] == pytest.approx(-1.0)
    y = batchnorm_infer(np.ones((1, 1)), [2.0], [1.0], [0.5], [0.25], eps=1e-12)
    assert y.item() == pytest.approx(3.0)


def test_bn_infer_rejects_negative_variance():
    with pytest.raises(ParameterError):
        batchnorm_infer(np.ones((1, 1)), [1.0], [0.0], [0.0], [-1.0])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 16), c=st.integers(1, 4))
def test_bn_infer_equals_affine_formula(seed, c):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, c, 3, 3))
    gamma, beta, mu = rng.normal(size=(3, c))
    sigma2 = rng.uniform(0, 2, size=c)
    eps = 1e-5
    y = batchnorm_infer(x, gamma, beta, mu, sigma2, eps)
    a = gamma / np.sqrt(sigma2 + eps)
    b = beta - gamma * mu / np.sqrt(sigma2 + eps)
    np.testing.assert_allclose(y, a[None, :, None, None] * x + b[None, :, None, None], atol=1e-6, rtol=0)


def test_bn_train_normalises_batch():
    rng = np.random.default_rng(5)
    x = rng.normal(3.0, 2.0, size=(16, 3, 5, 5))
    rm, rv = np.zeros(3), np.ones(3)
    y, _ = batchnorm_train(x, np.ones(3), np.zeros(3), rm, rv)
    np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0, atol=1e-10)
    np.testing.assert_allclose(y.var(axis=(0, 2, 3)), 1, atol=1e-4)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)))


def test_bn_train_examples():
    x = np.random.default_rng(6).normal(size=(8, 2))
    x = (x - x.mean(0)) / x.std(0)
    y, _ = batchnorm_train(x, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2))
    np.testing.assert_allclose(y, x / np.sqrt(1 + 1e-5), atol=1e-12)
    y, _ = batchnorm_train(x, np.zeros(2), np.full(2, 5.0), np.zeros(2), np.ones(2))
    np.testing.assert_array_equal(y, 5.0)
    with pytest.raises(ParameterError):
        batchnorm_train(x, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), eps=-1e-5)


def test_bn_constant_batch_is_finite():
    y, _ = batchnorm_train(np.ones((4, 2, 2, 2)), np.ones(2), np.zeros(2), np.zeros(2), np.ones(2))
    assert np.all(np.isfinite(y)) and not y.any()


def test_bn_train_matches_infer_with_batch_stats():
    x = np.random.default_rng(7).normal(size=(6, 3, 2, 2))
    gamma, beta = np.array([1.0, 2.0, 0.5]), np.array([0.0, -1.0, 3.0])
    y, _ = batchnorm_train(x, gamma, beta, np.zeros(3), np.ones(3))
    y2 = batchnorm_infer(x, gamma, beta, x.mean(axis=(0, 2, 3)), x.var(axis=(0, 2, 3)))
    np.testing.assert_allclose(y, y2, atol=1e-12)


def test_bn_backward_finite_differences():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(4, 3, 2, 2))
    gamma, beta = rng.normal(size=3), rng.normal(size=3)
    r = rng.normal(size=x.shape)

    def f():
        y, _ = batchnorm_train(x, gamma, beta, np.zeros(3), np.ones(3))
        return float((y * r).sum())

    _, cache = batchnorm_train(x, gamma, beta, np.zeros(3), np.ones(3))
    gx, gg, gb = batchnorm_backward(r, cache)
    assert rel_error(gx, central_difference(f, x)) < 1e-6
    assert rel_error(gg, central_difference(f, gamma)) < 1e-6
    assert rel_error(gb, central_difference(f, beta)) < 1e-6


# ------------------------------------------------------------ dense + CE

def test_dense_backward_finite_differences():
    rng = np.random.default_rng(9)
    x, w, b = rng.normal(size=(3, 5)), rng.normal(size=(4, 5)), rng.normal(size=4)
    r = rng.normal(size=(3, 4))
    gx, gw, gb = dense_backward(r, x, w)
    f = lambda: float((dense(x, w, b) * r).sum())
    assert rel_error(gx, central_difference(f, x)) < 1e-7
    assert rel_error(gw, central_difference(f, w)) < 1e-7
    assert rel_error(gb, central_difference(f, b)) < 1e-7


def test_dense_shape_errors():
    with pytest.raises(DimensionError):
        dense(np.ones(3), np.ones((2, 4)))
    with pytest.raises(DimensionError):
        dense(np.ones(4), np.ones((2, 4)), np.ones(3))


def test_cross_entropy_examples():
    loss, _ = softmax_cross_entropy(np.zeros(7), 3)
    assert loss == pytest.approx(math.log(7))
    loss, _ = softmax_cross_entropy(np.array([0.0, 100.0, 0.0]), 1)
    assert loss < 1e-40
    with pytest.raises(ParameterError):
        softmax_cross_entropy(np.zeros(3), 3)
    loss, _ = softmax_cross_entropy(np.array([1e4, 0.0]), 1)
    assert loss == pytest.approx(1e4)


def test_cross_entropy_gradient_finite_differences():
    rng = np.random.default_rng(10)
    z = rng.normal(size=(5, 6)) * 3
    y = rng.integers(0, 6, size=5)
    _, g = softmax_cross_entropy(z, y)
    assert rel_error(g, central_difference(lambda: softmax_cross_entropy(z, y)[0], z)) < 1e-7


# ------------------------------------------------------------------- SGD

def test_sgd_examples():
    p = np.array([1.0, -2.0])
    out, _ = sgd_step(p, np.zeros(2), None, lr=0.1)
    np.testing.assert_array_equal(out, p)
    out, _ = sgd_step(np.array([1.0]), np.array([1.0]), None, lr=0.1)
    assert out.item() == pytest.approx(0.9)


def test_sgd_momentum_recurrence():
    lr, m = 0.1, 0.9
    p, v = np.array([1.0]), None
    p, v = sgd_step(p, np.array([1.0]), v, lr, m)
    p, v = sgd_step(p, np.array([0.5]), v, lr, m)
    # v1 = 1, p1 = 0.9; v2 = 0.9*1 + 0.5 = 1.4, p2 = 0.9 - 0.14
    assert v.item() == pytest.approx(1.4)
    assert p.item() == pytest.approx(0.76)


def test_sgd_weight_decay_and_nan():
    p, _ = sgd_step(np.array([2.0]), np.array([0.0]), None, 0.5, weight_decay=0.1)
    assert p.item() == pytest.approx(2.0 - 0.5 * 0.2)
    with pytest.raises(TrainingError):
        sgd_step(np.array([1.0]), np.array([np.nan]), None, 0.1)


def test_sgd_optimizer_skips_params_without_grad():
    a, b = Tensor(np.ones(2)), Tensor(np.ones(2))
    a.accumulate(np.ones(2))
    opt = SGD([a, b], lr=0.5, momentum=0.0)
    opt.step()
    np.testing.assert_array_equal(a.data, [0.5, 0.5])
    np.testing.assert_array_equal(b.data, [1.0, 1.0])


def test_operations_are_deterministic():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(8, 3, 16, 16)).astype(np.float32)
    w = rng.normal(size=(16, 3, 3, 3)).astype(np.float32)
    with deterministic():
        a = conv2d(x, w, 1, 1)
        b = conv2d(x, w, 1, 1)
        ga = conv2d_backward(a, x, w, 1, 1)
        gb = conv2d_backward(b, x, w, 1, 1)
    assert a.tobytes() == b.tobytes()
    assert all(u.tobytes() == v.tobytes() for u, v in zip(ga, gb))


def test_clip_grad_norm():
    a = Tensor(np.zeros(2), grad=np.array([3.0, 0.0]))
    b = Tensor(np.zeros(1), grad=np.array([4.0]))
    assert clip_grad_norm([a, b], 10.0) == 5.0
    np.testing.assert_array_equal(a.grad, [3.0, 0.0])
    assert clip_grad_norm([a, b], 1.0) == 5.0
    np.testing.assert_allclose(np.concatenate([a.grad, b.grad]), [0.6, 0.0, 0.8], rtol=1e-6)
    with pytest.raises(ParameterError):
        clip_grad_norm([a], 0.0)

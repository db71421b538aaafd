import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gaitsep import _backend
from gaitsep import kernels as K


def naive_sepconv(x, dw, pw, bias=None):
    """Direct loops over zero-padded input; shares no code with the kernels."""
    length, c = x.shape
    k = dw.shape[0]
    left = (k - 1) // 2
    h = np.zeros((length, c))
    for t in range(length):
        for ch in range(c):
            acc = 0.0
            for j in range(k):
                src = t + j - left
                if 0 <= src < length:
                    acc += dw[j, ch] * x[src, ch]
            h[t, ch] = acc
    y = np.zeros((length, pw.shape[1]))
    for t in range(length):
        for f in range(pw.shape[1]):
            y[t, f] = sum(h[t, ch] * pw[ch, f] for ch in range(c))
            if bias is not None:
                y[t, f] += bias[f]
    return y


def fd_check(fn, arrays, n_entries, rng, step=1e-6):
    """Max relative error of analytic vs central-difference gradients of
    ``L = sum(fn(*arrays) * R)``; ``fn`` returns ``(y, grads)``."""
    y, _ = fn(*arrays)
    weights = rng.standard_normal(np.shape(y))
    _, grads = fn(*arrays, grad=weights)
    worst = 0.0
    sizes = [a.size for a in arrays]
    for _ in range(n_entries):
        ai = rng.choice(len(arrays), p=np.array(sizes) / sum(sizes))
        j = rng.integers(arrays[ai].size)
        plus = [a.copy() for a in arrays]
        minus = [a.copy() for a in arrays]
        plus[ai].flat[j] += step
        minus[ai].flat[j] -= step
        num = (np.sum(fn(*plus)[0] * weights) - np.sum(fn(*minus)[0] * weights)) / (2 * step)
        ana = grads[ai].flat[j]
        worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-6))
    return worst


# --- forward oracles -------------------------------------------------------

@pytest.mark.parametrize("k", [1, 4, 5, 7, 9, 10])
def test_sepconv_matches_direct_loops(rng, k):
    x = rng.standard_normal((17, 3))
    params = K.SepConvParams(rng.standard_normal((k, 3)), rng.standard_normal((3, 5)), rng.standard_normal(5))
    np.testing.assert_allclose(K.sepconv1d_forward(x, params), naive_sepconv(x, *vars(params).values()),
                               atol=1e-12)


def test_same_padding_puts_extra_zero_on_the_right():
    assert K.same_padding(10) == (4, 5)
    assert K.same_padding(9) == (4, 4)
    assert K.same_padding(1) == (0, 0)


def test_sepconv_keeps_length_and_counts_params(rng):
    params = K.SepConvParams(rng.standard_normal((10, 3)), rng.standard_normal((3, 100)), np.zeros(100))
    assert K.sepconv1d_forward(rng.standard_normal((60, 3)), params).shape == (60, 100)
    assert params.n_params == 430
    second = K.SepConvParams(np.zeros((10, 100)), np.zeros((100, 40)), np.zeros(40))
    assert second.n_params == 5040


@given(a=st.floats(-5, 5), seed=st.integers(0, 2**16))
def test_sepconv_is_linear_in_input(a, seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((2, 20, 4))
    params = K.SepConvParams(r.standard_normal((5, 4)), r.standard_normal((4, 6)))
    np.testing.assert_allclose(K.sepconv1d_forward(a * x, params), a * K.sepconv1d_forward(x, params),
                               atol=1e-12, rtol=1e-12)


@given(a=st.floats(-5, 5), seed=st.integers(0, 2**16))
def test_sepconv_is_linear_in_each_weight_tensor(a, seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((20, 4))
    dw, pw = r.standard_normal((5, 4)), r.standard_normal((4, 6))
    base = K.sepconv1d_forward(x, K.SepConvParams(dw, pw))
    np.testing.assert_allclose(K.sepconv1d_forward(x, K.SepConvParams(a * dw, pw)), a * base, atol=1e-12)
    np.testing.assert_allclose(K.sepconv1d_forward(x, K.SepConvParams(dw, a * pw)), a * base, atol=1e-12)


def test_sepconv_rejects_channel_mismatch(rng):
    params = K.SepConvParams(rng.standard_normal((5, 3)), rng.standard_normal((3, 8)))
    with pytest.raises(K.ContractError):
        K.sepconv1d_forward(rng.standard_normal((60, 4)), params)
    with pytest.raises(K.ContractError):
        K.sepconv1d_forward(rng.standard_normal((60, 3)),
                            K.SepConvParams(params.depthwise, rng.standard_normal((4, 8))))


def test_sepconv_rejects_non_finite_input(rng):
    x = rng.standard_normal((60, 3))
    x[3, 1] = np.nan
    params = K.SepConvParams(rng.standard_normal((5, 3)), rng.standard_normal((3, 8)))
    with pytest.raises(K.ContractError):
        K.sepconv1d_forward(x, params)


def test_softmax_examples():
    np.testing.assert_allclose(K.softmax([0.3, 0.3]), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(K.softmax([math.log(3.0), 0.0]), [0.75, 0.25], atol=1e-15)
    dense = K.DenseParams(np.zeros((40, 2)), np.zeros(2))
    assert dense.n_params == 82


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=2), st.floats(-100, 100))
def test_softmax_sums_to_one_and_ignores_shifts(logits, shift):
    p = K.softmax(logits)
    assert abs(p.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(K.softmax(np.array(logits) + shift), p, atol=1e-9)


def test_weighted_crossentropy_examples():
    assert K.weighted_crossentropy([1.0, 0.0], [1, 0], 1.0) == 0.0
    assert K.weighted_crossentropy([0.5, 0.5], [0, 1], 2.0) == pytest.approx(2 * math.log(2), abs=1e-12)
    assert K.weighted_crossentropy([0.9, 0.1], [0, 1], 0.0) == 0.0
    # zero probability is floored rather than producing inf
    assert K.weighted_crossentropy([1.0, 0.0], [0, 1], 1.0) == pytest.approx(-math.log(1e-12))


def test_weighted_crossentropy_batch_is_mean_of_weighted_samples():
    probs = np.array([[0.2, 0.8], [0.6, 0.4]])
    onehot = np.array([[0, 1], [1, 0]])
    expected = (1.5 * -math.log(0.8) + 0.5 * -math.log(0.6)) / 2
    assert K.weighted_crossentropy(probs, onehot, np.array([1.5, 0.5])) == pytest.approx(expected, abs=1e-14)


def test_pooling_floor_semantics(rng):
    x = rng.standard_normal((2, 61, 3))
    assert K.maxpool1d(x, 3).shape == (2, 20, 3)
    assert K.avgpool1d(x, 2).shape == (2, 30, 3)
    with pytest.raises(K.ContractError):
        K.maxpool1d(x[:, :2], 3)


def test_maxpool_routes_to_first_maximum():
    x = np.array([[1.0], [3.0], [3.0], [2.0], [0.0], [2.0], [9.0]])
    g = np.array([[10.0], [20.0]])
    gx = K.maxpool1d_backward(x, 3, g)
    np.testing.assert_array_equal(gx[:, 0], [0, 10, 0, 20, 0, 0, 0])


def test_avgpool_divides_gradient_uniformly():
    gx = K.avgpool1d_backward(np.zeros((5, 1)), 2, np.array([[4.0], [6.0]]))
    np.testing.assert_array_equal(gx[:, 0], [2, 2, 3, 3, 0])


def test_batchnorm_train_normalizes_and_infer_uses_running_stats(rng):
    x = 3.0 + 2.0 * rng.standard_normal((8, 30, 4))
    bn = K.BatchNormParams(np.ones(4), np.zeros(4), np.zeros(4), np.ones(4))
    y, cache = K.batchnorm_forward(x, bn, "train")
    np.testing.assert_allclose(y.mean(axis=(0, 1)), 0, atol=1e-12)
    var = x.var(axis=(0, 1))
    np.testing.assert_allclose(y.var(axis=(0, 1)), var / (var + 1e-3), rtol=1e-10)
    rm, rv = K.updated_running_stats(bn, cache)
    np.testing.assert_allclose(rm, 0.01 * x.mean(axis=(0, 1)), rtol=1e-12)
    np.testing.assert_allclose(rv, 0.99 + 0.01 * var, rtol=1e-12)
    y_inf, none = K.batchnorm_forward(x, bn, "infer")
    assert none is None
    np.testing.assert_allclose(y_inf, x / math.sqrt(1 + 1e-3), rtol=1e-12)


def test_dropout_is_inverted(rng):
    x = np.ones((200, 50))
    y, mask = K.dropout_forward(x, 0.5, rng)
    assert set(np.unique(y)) <= {0.0, 2.0}
    assert abs(y.mean() - 1.0) < 0.05
    with pytest.raises(K.ContractError):
        K.dropout_forward(x, 1.0, rng)


# --- gradients vs finite differences, >= 200 entries per layer type ---------

N_FD = 200
FD_TOL = 1e-4  # relative error bound for step-1e-6 central differences


def test_fd_sepconv(rng):
    def fn(x, dw, pw, b, grad=None):
        p = K.SepConvParams(dw, pw, b)
        y = K.sepconv1d_forward(x, p)
        if grad is None:
            return y, None
        gx, gp = K.sepconv1d_backward(x, p, grad)
        return y, (gx, gp.depthwise, gp.pointwise, gp.bias)

    arrays = [rng.standard_normal((3, 20, 4)), rng.standard_normal((10, 4)), rng.standard_normal((4, 5)),
              rng.standard_normal(5)]
    assert fd_check(fn, arrays, N_FD, rng) < FD_TOL


def test_fd_conv1x1(rng):
    def fn(x, w, grad=None):
        y = K.conv1x1_forward(x, w)
        return y, None if grad is None else K.conv1x1_backward(x, w, grad)

    assert fd_check(fn, [rng.standard_normal((3, 20, 4)), rng.standard_normal((4, 6))], N_FD, rng) < FD_TOL


def test_fd_batchnorm(rng):
    def fn(x, gamma, beta, grad=None):
        p = K.BatchNormParams(gamma, beta, np.zeros(4), np.ones(4))
        y, cache = K.batchnorm_forward(x, p, "train")
        return y, None if grad is None else K.batchnorm_backward(p, cache, grad)

    arrays = [rng.standard_normal((3, 10, 4)), 1 + 0.3 * rng.standard_normal(4), rng.standard_normal(4)]
    assert fd_check(fn, arrays, N_FD, rng) < FD_TOL


@pytest.mark.parametrize("kind", ["relu", "maxpool", "avgpool", "gap"])
def test_fd_parameter_free_layers(rng, kind):
    forward = {
        "relu": K.relu, "maxpool": lambda x: K.maxpool1d(x, 3), "avgpool": lambda x: K.avgpool1d(x, 2),
        "gap": K.global_avg_pool,
    }[kind]
    backward = {
        "relu": K.relu_backward, "maxpool": lambda x, g: K.maxpool1d_backward(x, 3, g),
        "avgpool": lambda x, g: K.avgpool1d_backward(x, 2, g), "gap": K.global_avg_pool_backward,
    }[kind]

    def fn(x, grad=None):
        return forward(x), None if grad is None else (backward(x, grad),)

    x = rng.standard_normal((4, 19, 5))
    x[np.abs(x) < 1e-3] = 0.5  # keep relu away from its kink
    assert fd_check(fn, [x], N_FD, rng) < FD_TOL


def test_fd_dense_softmax_with_crossentropy(rng):
    onehot = np.eye(2)[rng.integers(0, 2, 6)]
    w = rng.random(6) + 0.5

    def fn(x, wm, b, grad=None):
        p = K.DenseParams(wm, b)
        probs = K.dense_softmax_forward(x, p)
        loss = np.array(K.weighted_crossentropy(probs, onehot, w))
        if grad is None:
            return loss, None
        gx, gp = K.dense_softmax_backward(x, p, K.crossentropy_logit_grad(probs, onehot, w) * grad)
        return loss, (gx, gp.weights, gp.bias)

    arrays = [rng.standard_normal((6, 16)), rng.standard_normal((16, 2)), rng.standard_normal(2)]
    assert fd_check(fn, arrays, N_FD, rng) < FD_TOL


# --- compiled vs numpy kernels ----------------------------------------------

@pytest.mark.skipif("cython" not in _backend.available(), reason="compiled extension not built")
@pytest.mark.parametrize("shape,k", [((4, 60, 3), 5), ((2, 20, 100), 10), ((3, 30, 8), 9)])
def test_compiled_kernels_match_numpy(rng, shape, k):
    mods = _backend.available()
    py, cy = mods["python"], mods["cython"]
    xpad = rng.standard_normal((shape[0], shape[1] + k - 1, shape[2]))
    w = rng.standard_normal((k, shape[2]))
    g = rng.standard_normal(shape)
    np.testing.assert_allclose(cy.depthwise_forward(xpad, w), py.depthwise_forward(xpad, w), atol=1e-12)
    for a, b in zip(cy.depthwise_backward(xpad, w, g), py.depthwise_backward(xpad, w, g)):
        np.testing.assert_allclose(a, b, atol=1e-11)
    x = np.round(rng.standard_normal(shape), 1)  # coarse values create ties
    gp = rng.standard_normal((shape[0], shape[1] // 3, shape[2]))
    np.testing.assert_array_equal(cy.maxpool_backward(x, 3, gp), py.maxpool_backward(x, 3, gp))

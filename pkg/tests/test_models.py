from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gaitsep import kernels as K
from gaitsep import models as M
from gaitsep.gradcheck import check_model_gradients

from conftest import random_params

GROUP_COUNTS = {
    "baseline": {"SepConv1": 430, "SepConv2": 5040, "Dense": 82},
    "model1": {"SepConv1": 39, "BN1": 16, "SepConv2": 184, "BN2": 32, "Dense": 34},
    "model2": {"Block1": 107, "Block2": 392, "Dense": 34},
}


def test_total_param_counts(specs):
    assert M.count_params(specs["model1"]) == 305
    assert M.count_params(specs["model2"]) == 533
    assert M.count_params(specs["baseline"]) == 5552


@pytest.mark.parametrize("name", M.MODEL_NAMES)
def test_group_param_counts(specs, name):
    assert M.count_params_by_group(specs[name]) == GROUP_COUNTS[name]


def test_model2_per_tensor_counts(specs):
    params = M.init_params(specs["model2"], 0)
    sizes = [arr.size for _, _, arr in params.trainable_items()]
    # block 1: depthwise, pointwise, BN, projection, BN; block 2 likewise; dense weights and bias
    assert sizes == [27, 24, 8, 8, 24, 8, 8, 72, 128, 16, 16, 128, 16, 16, 32, 2]


def test_param_count_matches_initialized_tensors(specs):
    for spec in specs.values():
        assert M.init_params(spec, 0).n_trainable() == M.count_params(spec)


def test_shape_inference(specs):
    s = M.infer_shapes(specs["baseline"])
    assert s[2] == (20, 100) and s[5] == (40,)
    s = M.infer_shapes(specs["model1"])
    assert s[3] == (30, 8) and s[7] == (16,)
    s = M.infer_shapes(specs["model2"])
    assert s[3] == (30, 8) and s[8] == (30, 8) and s[15] == (30, 16) and s[16] == (16,)


def test_mac_counts_and_ordering(specs):
    macs = {n: M.count_macs(s) for n, s in specs.items()}
    assert macs == {"model1": 8852, "model2": 16292, "baseline": 119880}
    assert macs["model1"] < macs["model2"] < macs["baseline"]


def test_unknown_model_and_invalid_graphs(specs):
    with pytest.raises(ValueError):
        M.build_spec("model3")
    m2 = specs["model2"]
    # dropping the skip projection leaves a 3-channel skip against an 8-channel main path
    bad = list(m2.layers)
    bad[4] = replace(bad[4], kind="relu", filters=0)
    bad[5] = replace(bad[5], kind="relu")
    with pytest.raises(ValueError, match="projection"):
        M.infer_shapes(replace(m2, layers=tuple(bad)))
    with pytest.raises(ValueError):
        M.infer_shapes(replace(m2, layers=m2.layers[:-1]))
    with pytest.raises(ValueError):
        M.infer_shapes(replace(m2, layers=(M.LayerSpec("residual_add", skip=3),) + m2.layers))


@pytest.mark.parametrize("name", M.MODEL_NAMES)
def test_forward_rows_sum_to_one_and_are_deterministic(specs, name, rng):
    spec = specs[name]
    params = random_params(spec, 3)
    x = rng.standard_normal((7, 60, 3)) * 0.3
    p = M.forward(spec, params, x)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    assert np.array_equal(p, M.forward(spec, params, x))


def test_model1_zero_window_gives_even_odds(specs):
    spec = specs["model1"]
    p = M.forward(spec, M.init_params(spec, 12), np.zeros((1, 60, 3)))
    np.testing.assert_array_equal(p, [[0.5, 0.5]])


def test_forward_rejects_bad_shapes(specs):
    with pytest.raises(K.ContractError):
        M.forward(specs["model1"], M.init_params(specs["model1"], 0), np.zeros((2, 59, 3)))


def test_infer_mode_ignores_dropout_and_train_mode_uses_it(specs, rng):
    spec = specs["baseline"]
    params = random_params(spec, 1)
    x = rng.standard_normal((4, 60, 3))
    a, _ = M.forward(spec, params, x, "train", np.random.default_rng(0))
    b, _ = M.forward(spec, params, x, "train", np.random.default_rng(1))
    assert not np.allclose(a, b)
    _, cache = M.forward(spec, params, x, "train", np.random.default_rng(0))
    assert set(np.unique(cache.masks[6])) <= {0.0, 2.0}


def test_backward_needs_train_cache(specs):
    spec = specs["model1"]
    with pytest.raises(K.ContractError):
        M.backward(spec, M.init_params(spec, 0), None, np.zeros((1, 2)))


@pytest.mark.parametrize("name", M.MODEL_NAMES)
def test_zero_loss_gradient_gives_zero_gradients(specs, name, rng):
    spec = specs[name]
    params = random_params(spec, 2)
    _, cache = M.forward(spec, params, rng.standard_normal((3, 60, 3)), "train")
    grads = M.backward(spec, params, cache, np.zeros((3, 2)))
    for _, _, arr in grads.trainable_items():
        assert not np.any(arr)


def test_residual_add_sends_equal_gradient_to_both_operands(specs, rng):
    spec = specs["model2"]
    params = random_params(spec, 4)
    probs, cache = M.forward(spec, params, rng.standard_normal((3, 60, 3)), "train")
    _, g_out, _ = M.backward(spec, params, cache, rng.standard_normal((3, 2)), return_activation_grads=True)
    for i, layer in enumerate(spec.layers):
        if layer.kind == "residual_add":
            # the skip operand is consumed only by the add, so its gradient is the add's
            np.testing.assert_array_equal(g_out[layer.skip], g_out[i])


@pytest.mark.parametrize("name", M.MODEL_NAMES)
def test_full_model_gradients_match_finite_differences(specs, name, rng):
    spec = specs[name]
    params = random_params(spec, 7)
    x = rng.standard_normal((4, 60, 3)) * 0.5
    onehot = np.eye(2)[[0, 1, 1, 0]]
    weights = np.array([0.8, 1.3, 1.3, 0.8])
    res = check_model_gradients(spec, params, x, onehot, weights, n_coords=150, seed=3)
    assert res.n_checked == 150
    assert res.max_rel_error < 1e-4


def test_init_is_he_normal_and_seeded(specs):
    spec = specs["baseline"]
    a, b = M.init_params(spec, 5), M.init_params(spec, 5)
    for (_, _, x), (_, _, y) in zip(a.trainable_items(), b.trainable_items()):
        assert np.array_equal(x, y)
    pw = M.init_params(spec, 6).layers[3].pointwise  # 100 -> 40
    assert abs(pw.std() - np.sqrt(2 / 100)) < 0.01
    dw = M.init_params(spec, 6).layers[3].depthwise  # fan-in is the kernel length
    assert abs(dw.std() - np.sqrt(2 / 10)) < 0.05


def test_weight_decay_applies_to_conv_and_dense_weights_only(specs):
    spec = specs["model2"]
    params = M.init_params(spec, 0)
    decayed = {(type(params.layers[i]).__name__, n) for i, n, _ in params.trainable_items()
               if M.is_decayed(params, i, n)}
    assert decayed == {("SepConvParams", "depthwise"), ("SepConvParams", "pointwise"),
                       ("Conv1x1Params", "weights"), ("DenseParams", "weights")}


@given(seed=st.integers(0, 2**16), batch=st.integers(1, 5))
def test_predict_proba_chunking_matches_single_pass(specs, seed, batch):
    spec = specs["model1"]
    params = random_params(spec, seed)
    x = np.random.default_rng(seed).standard_normal((7, 60, 3))
    np.testing.assert_allclose(M.predict_proba(spec, params, x, batch_size=batch), M.forward(spec, params, x),
                               atol=1e-15)

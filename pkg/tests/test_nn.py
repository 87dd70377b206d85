"""Layers: initialization statistics, spectral norm vs SVD, batch norm,
self-attention algebra."""

import numpy as np
import pytest

from gradcheck import check_gradients
from usgan import nn
from usgan.tensor import ShapeError, Tensor, batchnorm2d


# -- initialization -----------------------------------------------------------


def build_tree(seed=7, sn=False):
    seq = nn.Sequential(
        "net",
        [
            ("conv0", nn.Conv2d(1, 8, 4, stride=2, padding=1, sn=sn)),
            ("bn0", nn.BatchNorm2d(8)),
            ("act0", nn.Activation("leaky_relu")),
        ],
    )
    return seq, seq.init_parameters(seed)


def test_init_deterministic():
    _, t1 = build_tree(seed=11)
    _, t2 = build_tree(seed=11)
    for name in t1.params:
        assert np.array_equal(t1.params[name].data, t2.params[name].data)


def test_init_seed_sensitivity():
    _, t1 = build_tree(seed=11)
    _, t2 = build_tree(seed=12)
    assert not np.array_equal(
        t1.params["net/conv0/weight"].data, t2.params["net/conv0/weight"].data
    )


def test_init_statistics_large_sample():
    w = nn.normal_init((64, 64, 4, 4), nn.WEIGHT_STD, 0, "stat-probe")
    assert abs(w.mean()) < 0.001
    assert abs(w.std() - 0.02) < 0.002


def test_bn_init_values():
    _, tree = build_tree()
    scale = tree.params["net/bn0/scale"].data
    assert abs(scale.mean() - 1.0) < 0.05
    assert np.allclose(tree.params["net/bn0/shift"].data, 0.0)
    assert np.allclose(tree.buffers["net/bn0/running_mean"], 0.0)
    assert np.allclose(tree.buffers["net/bn0/running_var"], 1.0)


def test_per_parameter_streams_independent():
    # removing a layer must not change surviving parameters
    full, tree_full = build_tree(seed=3)
    small = nn.Sequential("net", [("conv0", nn.Conv2d(1, 8, 4, stride=2, padding=1))])
    tree_small = small.init_parameters(3)
    assert np.array_equal(
        tree_full.params["net/conv0/weight"].data,
        tree_small.params["net/conv0/weight"].data,
    )


def test_duplicate_parameter_name_rejected():
    tree = nn.ParameterTree()
    tree.add_param("w", np.zeros(2, np.float32))
    with pytest.raises(KeyError):
        tree.add_param("w", np.zeros(2, np.float32))


def test_load_state_shape_mismatch_names_entry():
    _, tree = build_tree()
    state = tree.state_arrays()
    state = {k: v.copy() for k, v in state.items()}
    state["net/conv0/weight"] = np.zeros((1, 1, 1, 1), np.float32)
    with pytest.raises(ShapeError, match="net/conv0/weight"):
        tree.load_state(state)


# -- spectral normalization ---------------------------------------------------


def test_power_iteration_converges_to_top_singular_value():
    rng = np.random.default_rng(42)
    for _ in range(50):
        m = int(rng.integers(2, 13))
        k = int(rng.integers(m, 4 * m + 1))
        w = rng.standard_normal((m, k))
        u = rng.standard_normal(m)
        u /= np.linalg.norm(u)
        sigma, u, v, degen = nn.spectral_norm_power_iteration(w, u, 50)
        assert not degen
        top = np.linalg.svd(w, compute_uv=False)[0]
        assert abs(sigma - top) < 1e-3


def test_power_iteration_diagonal_oracle():
    w = np.diag([3.0, 1.0])
    u = np.array([1.0, 1.0]) / np.sqrt(2)
    sigma, _, _, _ = nn.spectral_norm_power_iteration(w, u, 30)
    assert abs(sigma - 3.0) < 1e-9


def test_power_iteration_zero_matrix_degenerate():
    sigma, _, _, degen = nn.spectral_norm_power_iteration(
        np.zeros((3, 4)), np.array([1.0, 0.0, 0.0]), 1
    )
    assert degen
    assert sigma == 1e-12


def test_spectral_norm_apply_unit_top_sv(rng):
    w = Tensor((rng.standard_normal((8, 3, 4, 4)) * 0.5).astype(np.float64))
    u = rng.standard_normal(8)
    u /= np.linalg.norm(u)
    wn = w
    for _ in range(50):
        wn = nn.spectral_norm_apply(w, u)
    top = np.linalg.svd(wn.data.reshape(8, -1), compute_uv=False)[0]
    assert top <= 1.0 + 5e-3


def test_spectral_norm_u_frozen_in_eval(rng):
    w = Tensor(rng.standard_normal((4, 6)))
    u = rng.standard_normal(4)
    u /= np.linalg.norm(u)
    before = u.copy()
    nn.spectral_norm_apply(w, u, update_u=False)
    assert np.array_equal(u, before)
    nn.spectral_norm_apply(w, u, update_u=True)
    assert not np.array_equal(u, before)


def test_spectral_norm_sigma_constant_in_backward(rng):
    # gradient of sum(W/sigma) wrt W is 1/sigma exactly (sigma detached)
    w = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
    u = rng.standard_normal(3)
    u /= np.linalg.norm(u)
    out = nn.spectral_norm_apply(w, u, update_u=False)
    wmat = w.data.reshape(3, -1)
    v = wmat.T @ u
    v /= np.linalg.norm(v)
    sigma = float(u @ wmat @ v)
    out.sum().backward()
    assert np.allclose(w.grad, 1.0 / sigma)


# -- batch norm ---------------------------------------------------------------


def test_batchnorm_train_normalizes(rng):
    x = Tensor(rng.standard_normal((8, 3, 4, 4)) * 5 + 2)
    scale = Tensor(np.ones(3))
    shift = Tensor(np.zeros(3))
    rm, rv = np.zeros(3), np.ones(3)
    y = batchnorm2d(x, scale, shift, rm, rv, training=True).data
    assert np.allclose(y.mean(axis=(0, 2, 3)), 0.0, atol=1e-6)
    assert np.allclose(y.std(axis=(0, 2, 3)), 1.0, atol=1e-3)


def test_batchnorm_running_stats_update():
    x = Tensor(np.ones((2, 1, 2, 2)) * 4.0)
    rm, rv = np.zeros(1), np.ones(1)
    batchnorm2d(x, Tensor(np.ones(1)), Tensor(np.zeros(1)), rm, rv, training=True)
    # momentum 0.1: rm = 0.9*0 + 0.1*4
    assert np.allclose(rm, 0.4)


def test_batchnorm_eval_uses_running_stats():
    x = Tensor(np.full((1, 1, 1, 2), 3.0))
    rm, rv = np.array([1.0]), np.array([4.0])
    y = batchnorm2d(
        x, Tensor(np.ones(1)), Tensor(np.zeros(1)), rm, rv, training=False, eps=0.0
    ).data
    assert np.allclose(y, (3.0 - 1.0) / 2.0)


def test_batchnorm_train_single_element_rejected():
    x = Tensor(np.ones((1, 2, 1, 1)))
    with pytest.raises(ValueError):
        batchnorm2d(
            x, Tensor(np.ones(2)), Tensor(np.zeros(2)), np.zeros(2), np.ones(2), True
        )


def test_batchnorm_gradients(rng):
    x = rng.standard_normal((4, 2, 3, 3))
    s = rng.standard_normal(2) * 0.1 + 1.0
    b = rng.standard_normal(2) * 0.1

    def fn(xx, ss, bb):
        rm, rv = np.zeros(2), np.ones(2)
        return (
            batchnorm2d(xx, ss, bb, rm, rv, training=True)
            .leaky_relu(0.2)
            .mean()
        )

    check_gradients(fn, [x, s, b], tol=2e-4)


def test_batchnorm_eval_gradients(rng):
    x = rng.standard_normal((2, 2, 3, 3))
    s = rng.standard_normal(2) * 0.1 + 1.0
    b = rng.standard_normal(2) * 0.1
    rm = rng.standard_normal(2) * 0.2
    rv = rng.random(2) + 0.5
    check_gradients(
        lambda xx, ss, bb: batchnorm2d(
            xx, ss, bb, rm.copy(), rv.copy(), training=False
        ).sum(),
        [x, s, b],
    )


# -- self-attention -----------------------------------------------------------


def sa_setup(channels=8, seed=5):
    seq = nn.Sequential("t", [("sa", nn.SelfAttention(channels))])
    return seq, seq.init_parameters(seed)


def test_self_attention_gamma_zero_is_bitwise_noop(rng):
    seq, tree = sa_setup()
    x = Tensor(rng.standard_normal((2, 8, 4, 4)).astype(np.float32))
    y = seq.forward(tree, x, training=True)
    assert np.array_equal(y.data, x.data)


def test_self_attention_changes_output_when_gamma_nonzero(rng):
    seq, tree = sa_setup()
    tree.params["t/sa/gamma"].data[...] = 0.5
    x = Tensor(rng.standard_normal((2, 8, 4, 4)).astype(np.float32))
    y = seq.forward(tree, x, training=True)
    assert y.shape == x.shape
    assert not np.array_equal(y.data, x.data)


def test_self_attention_rows_sum_to_one(rng):
    # re-derive the attention matrix from the parameters and check rows
    seq, tree = sa_setup(channels=16)
    x = rng.standard_normal((1, 16, 4, 4)).astype(np.float32)
    from usgan.tensor import conv2d

    xt = Tensor(x)
    f = conv2d(xt, tree.params["t/sa/wf"]).data.reshape(1, 2, 16)
    g = conv2d(xt, tree.params["t/sa/wg"]).data.reshape(1, 2, 16)
    logits = np.einsum("bcq,bck->bqk", f, g)
    attn = np.exp(logits - logits.max(axis=2, keepdims=True))
    attn /= attn.sum(axis=2, keepdims=True)
    assert np.allclose(attn.sum(axis=2), 1.0, atol=1e-6)


def test_self_attention_hand_case_two_positions():
    # 1 channel, 1x2 image, all projection weights = identity scalars:
    # logits row q = [x_q*x_0, x_q*x_1]; output o_q = sum_k attn[q,k] * x_k
    seq = nn.Sequential("t", [("sa", nn.SelfAttention(1))])
    tree = seq.init_parameters(0)
    for nm in ("wf", "wg", "wh", "wv"):
        tree.params[f"t/sa/{nm}"].data[...] = 1.0
    tree.params["t/sa/gamma"].data[...] = 1.0
    x = np.array([[[[1.0, 2.0]]]], np.float32)
    y = seq.forward(tree, Tensor(x), training=True).data
    logits = np.array([[1.0, 2.0], [2.0, 4.0]])
    attn = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    o = attn @ np.array([1.0, 2.0])
    expected = x[0, 0, 0] + o
    assert np.allclose(y[0, 0, 0], expected, atol=1e-6)


def test_self_attention_inner_channels_floor():
    assert nn.SelfAttention(4).inner == 1
    assert nn.SelfAttention(64).inner == 8


def test_self_attention_gradients(rng):
    seq, _ = sa_setup(channels=8)
    x = rng.standard_normal((2, 8, 3, 3)) * 0.5
    wf = rng.standard_normal((1, 8, 1, 1)) * 0.2
    wg = rng.standard_normal((1, 8, 1, 1)) * 0.2
    wh = rng.standard_normal((8, 8, 1, 1)) * 0.2
    wv = rng.standard_normal((8, 8, 1, 1)) * 0.2
    gamma = np.array([0.7])

    def fn(xx, f, g, h, v, gm):
        tree = nn.ParameterTree()
        for nm, t in (("t/sa/wf", f), ("t/sa/wg", g), ("t/sa/wh", h), ("t/sa/wv", v), ("t/sa/gamma", gm)):
            tree.params[nm] = t
        return seq.layers[0][1].forward(tree, "t/sa", xx, True).sum()

    check_gradients(fn, [x, wf, wg, wh, wv, gamma], tol=2e-4)

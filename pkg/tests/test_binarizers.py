import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dybnn import autograd as ag
from dybnn import binarizers as bz
from dybnn.autograd import Tensor
from dybnn.errors import ArgumentError, ContractViolation, DimensionError


def np_gelu(x):
    return 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x**3)))


def np_sign(x):
    return np.where(x > 0, 1.0, -1.0)


@pytest.mark.parametrize("c,gamma,r", [(16, 16, 1), (64, 16, 4), (256, 16, 16), (8, 16, 1), (1, 16, 1), (24, 16, 2), (128, 4, 32)])
def test_squeeze_width(c, gamma, r):
    assert bz.squeeze_width(c, gamma) == r


def test_squeeze_width_rejects_zero():
    with pytest.raises(ArgumentError):
        bz.squeeze_width(0, 16)


def test_sign_matches_numpy(rng):
    x = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(bz.sign(x).data, np_sign(x))


def test_rsign_channel_thresholds(rng):
    x = rng.standard_normal((2, 3, 4, 4))
    t = np.array([0.5, -0.5, 0.0])
    np.testing.assert_array_equal(bz.rsign(x, bz.StaticThresholds(t)).data, np_sign(x - t[None, :, None, None]))


def test_rsign_token_thresholds(rng):
    x = rng.standard_normal((2, 5, 3))
    t = rng.standard_normal(5)
    np.testing.assert_array_equal(bz.rsign(x, t, mode="token").data, np_sign(x - t[None, :, None]))


def test_rsign_count_mismatch(rng):
    with pytest.raises(DimensionError):
        bz.rsign(rng.standard_normal((2, 3, 4, 4)), np.zeros(4))


def test_dysign_cnn_matches_oracle(rng):
    x = rng.standard_normal((3, 32, 5, 5)).astype(np.float64)
    w1, w2 = rng.standard_normal((2, 32)), rng.standard_normal((32, 2))
    p = bz.DySignParams(w1, w2, 16)
    alpha = x.mean(axis=(2, 3)) @ w1.T @ w2.T
    with ag.default_dtype(np.float64):
        np.testing.assert_allclose(bz.dysign_thresholds(Tensor(x), p).data, alpha, rtol=1e-12)
        out = bz.dysign(Tensor(x), p).data
    np.testing.assert_array_equal(out, np_sign(x - alpha[:, :, None, None]))


def test_dysign_token_wise_with_gelu(rng):
    x = rng.standard_normal((2, 8, 6))
    w1, w2 = rng.standard_normal((2, 8)), rng.standard_normal((8, 2))
    p = bz.DySignParams(w1, w2, 4, use_gelu=True, mode="token")
    alpha = np_gelu(x.mean(axis=2) @ w1.T) @ w2.T  # (B, N)
    with ag.default_dtype(np.float64):
        out = bz.dysign(Tensor(x), p).data
    np.testing.assert_array_equal(out, np_sign(x - alpha[:, :, None]))


def test_dysign_channel_wise_on_tokens(rng):
    x = rng.standard_normal((2, 8, 6))
    w1, w2 = rng.standard_normal((1, 6)), rng.standard_normal((6, 1))
    p = bz.DySignParams(w1, w2, 4, mode="channel")
    alpha = x.mean(axis=1) @ w1.T @ w2.T  # (B, D)
    with ag.default_dtype(np.float64):
        np.testing.assert_array_equal(bz.dysign(Tensor(x), p).data, np_sign(x - alpha[:, None, :]))


def test_dysign_params_shape_check():
    with pytest.raises(DimensionError):
        bz.DySignParams(np.zeros((2, 8)), np.zeros((2, 8)))
    with pytest.raises(ArgumentError):
        bz.DySignParams(np.zeros((2, 8)), np.zeros((8, 2)), mode="spatial")


def test_token_mode_rejects_images(rng):
    p = bz.DySignParams(np.zeros((1, 4)), np.zeros((4, 1)), mode="token")
    with pytest.raises(DimensionError):
        bz.dysign(rng.standard_normal((1, 4, 2, 2)), p)


@given(st.integers(1, 40), st.integers(1, 3), st.integers(0, 1000))
def test_zero_hyperfunction_reduces_to_sign(c, b, seed):
    x = np.random.default_rng(seed).standard_normal((b, c, 3, 3)).astype(np.float32)
    m = bz.DySign(c, 16, init="zeros").init_parameters(0)
    np.testing.assert_array_equal(m(Tensor(x)).data, bz.sign(x).data)


def test_dysign_thresholds_receive_gradient(rng):
    m = bz.DySign(8, 4).init_parameters(3)
    x = Tensor(rng.standard_normal((2, 8, 3, 3)) * 0.3)
    m(x).sum().backward()
    assert np.any(m.hyper.W1.grad != 0) and np.any(m.hyper.W2.grad != 0)


def test_rprelu_static(rng):
    x = rng.standard_normal((2, 3, 2, 2))
    m = bz.RPReLU(3).init_parameters(0)
    m.gamma_shift.data[:] = [0.1, -0.2, 0.3]
    m.zeta_shift.data[:] = [1.0, 2.0, 3.0]
    g, z = m.gamma_shift.data[None, :, None, None], m.zeta_shift.data[None, :, None, None]
    d = x - g
    np.testing.assert_allclose(m(Tensor(x)).data, np.where(d > 0, d, 0.25 * d) + z, rtol=1e-6, atol=1e-6)


def test_dyprelu_matches_oracle(rng):
    x = rng.standard_normal((2, 16, 3, 3))
    m = bz.DyPReLU(16, 16).init_parameters(5)
    stat = x.mean(axis=(2, 3))
    g = stat @ m.hyper_gamma.W1.data.T @ m.hyper_gamma.W2.data.T
    z = stat @ m.hyper_zeta.W1.data.T @ m.hyper_zeta.W2.data.T
    d = x - g[:, :, None, None]
    expected = np.where(d > 0, d, 0.25 * d) + z[:, :, None, None]
    np.testing.assert_allclose(m(Tensor(x.astype(np.float32))).data, expected, rtol=1e-5, atol=1e-5)


def test_zero_dyprelu_equals_default_rprelu(rng):
    x = Tensor(rng.standard_normal((2, 16, 3, 3)).astype(np.float32))
    a = bz.DyPReLU(16, init="zeros").init_parameters(0)(x).data
    b = bz.RPReLU(16).init_parameters(0)(x).data
    np.testing.assert_array_equal(a, b)


def test_dyprelu_needs_hyper():
    with pytest.raises(ArgumentError):
        bz.dyprelu(np.zeros((1, 2, 1, 1)), bz.PReLUParams(np.ones(2), None, None, dynamic=True))


def test_binary_weight_zero_mean_sign_and_scale(rng):
    w = rng.standard_normal((4, 6)) + 0.7
    meta = bz.binarize_weights(w)
    assert meta.alpha_w == pytest.approx(np.abs(w).mean(), rel=1e-6)
    assert meta.u == pytest.approx(w.mean())
    np.testing.assert_array_equal(meta.packed.unpack(), np_sign(w - w.mean()))


def test_binarize_empty_weight():
    with pytest.raises(ArgumentError):
        bz.binarize_weights(np.zeros((0, 3)))


def test_binary_linear_matches_dense_oracle(rng):
    lin = bz.BinaryLinear(70, 5).init_parameters(2)
    lin.bias.data[:] = rng.standard_normal(5)
    xb = np_sign(rng.standard_normal((3, 4, 70))).astype(np.float32)
    w = lin.weight.data.astype(np.float64)
    expected = np.abs(w).mean() * (xb @ np_sign(w - w.mean()).T) + lin.bias.data
    np.testing.assert_allclose(lin(Tensor(xb)).data, expected, rtol=1e-5)
    np.testing.assert_array_equal(lin(Tensor(xb), packed=True).data, lin(Tensor(xb)).data)


def test_binary_conv_packed_equals_float(rng):
    conv = bz.BinaryConv2d(6, 4, 3, 2, 1).init_parameters(1)
    xb = Tensor(np_sign(rng.standard_normal((2, 6, 8, 8))).astype(np.float32))
    np.testing.assert_array_equal(conv(xb, packed=True).data, conv(xb).data)


def test_strict_inputs_reject_real_values(rng):
    lin = bz.BinaryLinear(4, 2).init_parameters(0)
    with bz.strict_binary_inputs():
        lin(Tensor(np.ones((1, 4))))
        with pytest.raises(ContractViolation):
            lin(Tensor(np.full((1, 4), 0.5)))


def test_zero_input_through_zero_mean_constant_weights():
    # constant weights are all at their mean, so sign(W - u) = -1 everywhere
    lin = bz.BinaryLinear(8, 3, bias=False).init_parameters(0)
    lin.weight.data[:] = 0.4
    out = lin(bz.sign(np.zeros((2, 8)))).data
    np.testing.assert_allclose(out, np.full((2, 3), 0.4 * 8), rtol=1e-6)


def test_shifted_attention_sign(rng):
    p = ag.softmax(Tensor(rng.standard_normal((2, 4, 4))), axis=-1)
    s = np.full((2, 4, 1), 0.25)
    np.testing.assert_array_equal(bz.shifted_attention_sign(p, s).data, np_sign(p.data - 0.25))
    np.testing.assert_array_equal(bz.shifted_attention_sign(p, np.zeros((2, 4, 1))).data, 1.0)


def test_shifted_attention_rejects_unnormalized(rng):
    with pytest.raises(ContractViolation):
        bz.shifted_attention_sign(np.full((2, 3), 0.5), 0.1)
    with pytest.raises(ContractViolation):
        bz.shifted_attention_sign(np.full((1, 2), 0.5), np.nan)


def test_factories_reject_unknown():
    with pytest.raises(ArgumentError):
        bz.make_binarizer("tanh", 4, 4)
    with pytest.raises(ArgumentError):
        bz.make_activation("elu", 4)

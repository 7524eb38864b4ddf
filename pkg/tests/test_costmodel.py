from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dybnn import autograd as ag
from dybnn.autograd import Tensor
from dybnn.binarizers import DySign
from dybnn.costmodel import (
    FULL_PER_ELEMENT, binarizer_sites, count_ops, dyprelu_overhead, dysign_overhead, eq_residual,
)
from dybnn.errors import ArgumentError, ConfigError
from dybnn.models import BCNNConfig, CCTConfig, build_dybcnn, build_dybinarycct, get_preset


@pytest.mark.parametrize("c,expected", [(256, 8448), (16, 48), (64, 576)])
def test_dysign_overhead_values(c, expected):
    assert dysign_overhead(c, 16) == expected == c + c * c // 8
    assert dyprelu_overhead(c, 16) == 2 * expected


def instrumented_flops(module, x, monkeypatch):
    """Count MACs of matmuls plus one per pooled output during a forward."""
    count = {"n": 0}
    real_matmul, real_mean = ag.matmul, ag.mean

    def matmul(a, b):
        out = real_matmul(a, b)
        count["n"] += out.size * a.shape[-1]
        return out

    def mean(a, axis=None, keepdims=False):
        out = real_mean(a, axis, keepdims)
        count["n"] += out.size
        return out

    monkeypatch.setattr(ag, "matmul", matmul)
    monkeypatch.setattr(ag, "mean", mean)
    module(Tensor(x))
    return count["n"]


@pytest.mark.parametrize("c", [16, 48, 64, 256])
def test_overhead_equals_instrumented_forward(monkeypatch, c):
    m = DySign(c, 16).init_parameters(0)
    x = np.random.default_rng(0).standard_normal((1, c, 4, 4)).astype(np.float32)
    assert instrumented_flops(m, x, monkeypatch) == dysign_overhead(c, 16)


def test_published_rows_against_identity():
    assert eq_residual(4.82e9, 0.22e8, 0.97e8) < 0.01
    assert eq_residual(1.68e9, 1.39e8, 1.63e8) == pytest.approx(0.0136, abs=1e-3)


bcnn_configs = st.builds(
    lambda n, dbl, b: BCNNConfig(
        widths=tuple(32 * 2 ** sum(dbl[: i + 1]) for i in range(n)),
        strides=tuple(2 if d else 1 for d in dbl[:n]),
        block_style=b,
    ),
    st.integers(1, 3), st.lists(st.booleans(), min_size=3, max_size=3), st.sampled_from(["basic", "reactnet"]),
)


@given(bcnn_configs, st.sampled_from(["published", "full"]))
def test_identity_and_nonnegativity(cfg, convention):
    r = count_ops(build_dybcnn(cfg, materialize=False), convention=convention)
    assert r.ops == r.bops / 64 + r.flops
    assert all(l.bops >= 0 and l.flops >= 0 for l in r.layers)
    assert r.bops == sum(l.bops for l in r.layers)


@given(bcnn_configs)
def test_mode_delta_cnn(cfg):
    sign = build_dybcnn(replace(cfg, binarizer="sign", activation="rprelu"), materialize=False)
    dy = build_dybcnn(replace(cfg, binarizer="dysign", activation="dyprelu"), materialize=False)
    expected = sum(dysign_overhead(c, g) for _, c, g in binarizer_sites(dy))
    expected += sum(dyprelu_overhead(l.params["channels"], 16) for l in dy.layers if l.kind == "dyprelu")
    a, b = count_ops(sign), count_ops(dy)
    assert b.flops - a.flops == expected
    assert a.bops == b.bops


@given(st.integers(0, 3), st.sampled_from(["token", "channel"]))
def test_mode_delta_cct(layers, mode):
    base = dict(image_size=16, embed_dim=32, num_heads=4, num_layers=layers, token_mode=mode)
    sign = build_dybinarycct(CCTConfig(binarizer="sign", **base), materialize=False)
    dy = build_dybinarycct(CCTConfig(**base), materialize=False)
    expected = sum(dysign_overhead(c, g) for _, c, g in binarizer_sites(dy))
    assert count_ops(dy).flops - count_ops(sign).flops == expected


def test_deeper_model_never_costs_less():
    prev = None
    for n in range(1, 4):
        r = count_ops(build_dybcnn(BCNNConfig(widths=(32,) * n, strides=(1,) * n), materialize=False), convention="full")
        if prev:
            assert r.bops >= prev.bops and r.flops >= prev.flops
        prev = r


def test_full_convention_dominates_published():
    g = get_preset("dybinarycct-2").build(materialize=False)
    p, f = count_ops(g), count_ops(g, convention="full")
    assert f.bops == p.bops and f.flops > p.flops
    softmax = FULL_PER_ELEMENT["softmax"] * 2 * 256 * 256 * 2  # heads * N * N * layers
    assert f.flops - p.flops > softmax


def test_empty_encoder_has_no_binary_ops():
    r = count_ops(build_dybinarycct(CCTConfig(num_layers=0), materialize=False))
    assert r.bops == 0
    assert r.ops == r.flops


def test_cct_bops_by_hand():
    cfg = CCTConfig(embed_dim=256, num_layers=6, num_heads=4)
    n, d, h = 256, 256, 512
    per_layer = 4 * n * d * d + 2 * n * n * d + 2 * n * d * h
    assert count_ops(build_dybinarycct(cfg, materialize=False)).bops == 6 * per_layer


def test_conv_macs_by_hand():
    g = build_dybcnn(BCNNConfig(widths=(64,), strides=(2,)), materialize=False)
    r = {l.name: l for l in count_ops(g).layers}
    assert r["stem"].flops == 3 * 32 * 32 * 32 * 9 + 32 * 32 * 32
    assert r["blocks.0.conv"].bops == 64 * 16 * 16 * 32 * 9
    assert r["classifier"].flops == 64 * 10


def test_report_outputs():
    p = get_preset("reactnet-a")
    r = count_ops(p.build(materialize=False), reference=p.reference)
    doc = r.to_dict()
    assert doc["totals"]["ops"] == r.ops
    assert "reference" in "\n".join(r.footer())
    assert "total" in r.format_table()
    assert set(r.by_kind()) >= {"conv_binary", "conv_fp", "batchnorm", "rprelu"}


def test_bad_convention_and_input_shape():
    g = get_preset("dybcnn-micro").build(materialize=False)
    with pytest.raises(ArgumentError):
        count_ops(g, convention="exact")
    with pytest.raises(ConfigError):
        count_ops(g, input_shape=(3, 64, 64))


@pytest.mark.parametrize("name,flops,ops", [("dybinarycct-6", 11.16e6, 26.89e6), ("dybinarycct-7", 11.81e6, 30.17e6)])
def test_dynamic_cct_rows_match_channel_thresholds_at_gamma_two(name, flops, ops):
    # the published rows agree with channel-wise hyperfunctions at reduction 2, not the token-wise presets
    r = count_ops(get_preset(name).build(materialize=False, token_mode="channel", gamma=2))
    assert r.flops == pytest.approx(flops, rel=1e-3)
    assert r.ops == pytest.approx(ops, rel=1e-3)
    preset = count_ops(get_preset(name).build(materialize=False))
    assert preset.ops < 0.92 * ops

import numpy as np
import pytest

from oracles import (channel_attention_oracle, naive_conv2d, same_pad, se_oracle,
                     sigmoid_scalar, spatial_attention_oracle)
from pave_forge.attention import (ASPPParams, ChannelAttentionParams, SEParams,
                                  SpatialAttentionParams, as_se, aspp, aspp_branches, cbam,
                                  channel_attention, se_block, spatial_attention)
from pave_forge.core import Kernel2D, conv2d


def _identity_gate(cls, c):
    return cls(np.eye(c), np.zeros(c), np.eye(c), np.zeros(c))


def test_channel_attention_hand_values():
    p = _identity_gate(ChannelAttentionParams, 2)
    np.testing.assert_array_equal(channel_attention(np.zeros((1, 2, 3, 3)), p), 0.5)
    x = np.zeros((1, 1, 2, 2))
    x[0, 0, 0, :] = 2.0
    m = channel_attention(x, _identity_gate(ChannelAttentionParams, 1))
    assert m[0, 0, 0, 0] == pytest.approx(0.952574, abs=1e-6)
    assert m[0, 0, 0, 0] == pytest.approx(sigmoid_scalar(3.0), abs=1e-15)


def test_channel_attention_oracle():
    rng = np.random.default_rng(20)
    x = rng.normal(size=(2, 4, 5, 3))
    p = ChannelAttentionParams.random(4, 2, rng)
    assert np.abs(channel_attention(x, p) - channel_attention_oracle(x, p)).max() < 1e-12


def test_channel_attention_dim_mismatch():
    with pytest.raises(ValueError):
        channel_attention(np.zeros((1, 3, 2, 2)), ChannelAttentionParams.zeros(4, 2))
    with pytest.raises(ValueError):
        ChannelAttentionParams.zeros(6, 4)


# ---- spatial attention


def test_spatial_attention_zero_and_center_tap():
    x = np.full((1, 3, 9, 9), 0.7)
    np.testing.assert_array_equal(spatial_attention(x, SpatialAttentionParams.zeros()), 0.5)
    w = np.zeros((1, 2, 7, 7))
    w[0, 0, 3, 3] = 1.0
    m = spatial_attention(x, SpatialAttentionParams(Kernel2D(w, np.zeros(1))))
    assert m.shape == (1, 1, 9, 9)
    np.testing.assert_allclose(m[0, 0, 3:-3, 3:-3], sigmoid_scalar(0.7), atol=1e-15)


def test_spatial_attention_oracle():
    rng = np.random.default_rng(21)
    x = rng.normal(size=(2, 3, 8, 6))
    p = SpatialAttentionParams.random(rng)
    assert np.abs(spatial_attention(x, p) - spatial_attention_oracle(x, p)).max() < 1e-12


def test_spatial_kernel_must_be_7x7():
    with pytest.raises(ValueError):
        SpatialAttentionParams(Kernel2D(np.zeros((1, 2, 5, 5))))


# ---- CBAM


def test_cbam_zero_params_quarter():
    rng = np.random.default_rng(22)
    x = rng.normal(size=(2, 4, 6, 5))
    out = cbam(x, ChannelAttentionParams.zeros(4, 2), SpatialAttentionParams.zeros())
    np.testing.assert_array_equal(out, 0.25 * x)


def test_cbam_saturated_identity():
    rng = np.random.default_rng(23)
    x = rng.normal(size=(1, 4, 6, 6))
    cp = ChannelAttentionParams(np.zeros((4, 2)), np.zeros(2), np.zeros((2, 4)), np.full(4, 30.0))
    sp = SpatialAttentionParams(Kernel2D(np.zeros((1, 2, 7, 7)), np.array([40.0])))
    np.testing.assert_allclose(cbam(x, cp, sp), x, atol=1e-6)


def test_cbam_two_step_composition():
    rng = np.random.default_rng(24)
    x = rng.normal(size=(2, 4, 7, 5))
    cp, sp = ChannelAttentionParams.random(4, 2, rng), SpatialAttentionParams.random(rng)
    mc = channel_attention_oracle(x, cp)
    f1 = x * mc
    expected = f1 * spatial_attention_oracle(f1, sp)
    out = cbam(x, cp, sp)
    assert out.shape == x.shape
    assert np.abs(out - expected).max() < 1e-12


def test_attention_maps_open_interval():
    rng = np.random.default_rng(25)
    for _ in range(10):
        x = rng.normal(size=(1, 4, 6, 6)) * 3
        mc = channel_attention(x, ChannelAttentionParams.random(4, 2, rng))
        ms = spatial_attention(x, SpatialAttentionParams.random(rng))
        for m in (mc, ms):
            assert np.all((m > 0) & (m < 1))


def test_cbam_channel_permutation_equivariance():
    rng = np.random.default_rng(26)
    x = rng.normal(size=(1, 4, 6, 6))
    cp, sp = ChannelAttentionParams.random(4, 2, rng), SpatialAttentionParams.random(rng)
    perm = rng.permutation(4)
    cpp = ChannelAttentionParams(cp.w1[perm], cp.b1, cp.w2[:, perm], cp.b2[perm])
    np.testing.assert_allclose(cbam(x[:, perm], cpp, sp), cbam(x, cp, sp)[:, perm], atol=1e-12)


# ---- SE


def test_se_hand_values():
    u = np.full((1, 3, 4, 4), 1.7)
    from pave_forge.core import global_avg_pool
    np.testing.assert_allclose(global_avg_pool(u), 1.7, atol=1e-15)
    rng = np.random.default_rng(27)
    v = rng.normal(size=(2, 4, 3, 3))
    np.testing.assert_array_equal(se_block(v, SEParams.zeros(4, 2)), 0.5 * v)


def test_se_oracle_and_equivariance():
    rng = np.random.default_rng(28)
    u = rng.normal(size=(2, 4, 5, 5))
    p = SEParams.random(4, 2, rng)
    out = se_block(u, p)
    assert out.shape == u.shape
    assert np.abs(out - se_oracle(u, p)).max() < 1e-12
    perm = rng.permutation(4)
    pp = SEParams(p.w1[perm], p.b1, p.w2[:, perm], p.b2[perm])
    np.testing.assert_allclose(se_block(u[:, perm], pp), out[:, perm], atol=1e-12)
    with pytest.raises(ValueError):
        se_block(np.zeros((1, 2, 3, 3)), p)


def test_se_params_count():
    assert SEParams.zeros(4, 2).n_params == 22


# ---- ASPP


def test_aspp_1x1_branch_with_selecting_projection():
    rng = np.random.default_rng(29)
    p = ASPPParams.random(3, rng)
    proj = np.zeros((3, 15, 1, 1))
    proj[:, 3:6, 0, 0] = np.eye(3)  # second slot of (image, 1x1, r6, r12, r18)
    p = ASPPParams(p.conv1x1, p.atrous, p.image_pool, Kernel2D(proj, np.zeros(3)))
    a = rng.normal(size=(1, 3, 10, 10))
    np.testing.assert_allclose(aspp(a, p), conv2d(a, p.conv1x1), atol=1e-12)


def test_aspp_constant_field_interior():
    c = 2
    avg1 = Kernel2D(np.full((c, c, 1, 1), 1 / c), np.zeros(c))
    avg3 = Kernel2D(np.full((c, c, 3, 3), 1 / (9 * c)), np.zeros(c))
    proj = Kernel2D(np.full((c, 5 * c, 1, 1), 1 / (5 * c)), np.zeros(c))
    p = ASPPParams(avg1, (avg3, avg3, avg3), avg1, proj)
    out = aspp(np.full((1, c, 40, 40), 0.6), p)
    np.testing.assert_allclose(out[:, :, 18:22, 18:22], 0.6, atol=1e-14)
    # the border sees zero padding on the dilated branches
    assert out[0, 0, 0, 0] < 0.6


def test_aspp_branches_match_dilated_oracle():
    rng = np.random.default_rng(30)
    a = rng.normal(size=(1, 2, 16, 16))
    p = ASPPParams.random(2, rng)
    branches = aspp_branches(a, p)
    assert len(branches) == 5
    for k, rate, got in zip(p.atrous, p.rates, branches[2:]):
        t, b = same_pad(3, rate)
        ref = naive_conv2d(a, k.weights, k.bias, dilation=rate, pad=(t, b, t, b))
        assert np.abs(got - ref).max() < 1e-12
        np.testing.assert_allclose(conv2d(a, k.dilated(rate)), got, atol=1e-12)
    pooled = a.mean(axis=(2, 3))
    img = pooled @ p.image_pool.weights[:, :, 0, 0].T + p.image_pool.bias
    np.testing.assert_allclose(branches[0], np.broadcast_to(img[:, :, None, None], branches[0].shape),
                               atol=1e-12)


def test_aspp_shapes_and_channel_mismatch():
    rng = np.random.default_rng(31)
    p = ASPPParams.random(4, rng, branch_channels=3, out_channels=5)
    out = aspp(rng.normal(size=(2, 4, 7, 9)), p)
    assert out.shape == (2, 5, 7, 9)
    with pytest.raises(ValueError):
        aspp(np.zeros((1, 3, 7, 9)), p)
    with pytest.raises(ValueError):
        ASPPParams(p.conv1x1, p.atrous[:2] + (Kernel2D(np.zeros((2, 4, 3, 3))),), p.image_pool, p.project)


def test_aspp_input_permutation_equivariance():
    rng = np.random.default_rng(32)
    p = ASPPParams.random(3, rng)
    a = rng.normal(size=(1, 3, 12, 12))
    perm = rng.permutation(3)

    def pin(k):
        return Kernel2D(k.weights[:, perm], k.bias)

    pp = ASPPParams(pin(p.conv1x1), tuple(pin(k) for k in p.atrous), pin(p.image_pool),
                    Kernel2D(p.project.weights[perm], p.project.bias[perm]))
    np.testing.assert_allclose(aspp(a[:, perm], pp), aspp(a, p)[:, perm], atol=1e-12)


# ---- AS-SE


def test_as_se_zero_se():
    rng = np.random.default_rng(33)
    a = rng.normal(size=(1, 4, 10, 10))
    ap = ASPPParams.random(4, rng)
    np.testing.assert_allclose(as_se(a, SEParams.zeros(4, 2), ap), aspp(0.5 * a, ap), atol=1e-12)
    nobias = ASPPParams.random(4, rng, bias=False)
    np.testing.assert_allclose(as_se(a, SEParams.zeros(4, 2), nobias), 0.5 * aspp(a, nobias),
                               atol=1e-12)


def test_as_se_saturated_and_composition():
    rng = np.random.default_rng(34)
    a = rng.normal(size=(1, 4, 9, 9))
    ap = ASPPParams.random(4, rng)
    sat = SEParams(np.zeros((4, 2)), np.zeros(2), np.zeros((2, 4)), np.full(4, 40.0))
    np.testing.assert_allclose(as_se(a, sat, ap), aspp(a, ap), atol=1e-6)
    se = SEParams.random(4, 2, rng)
    out = as_se(a, se, ap)
    assert out.shape == a.shape
    assert np.abs(out - aspp(se_oracle(a, se), ap)).max() < 1e-12

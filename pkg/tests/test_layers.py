import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vqjscc import autodiff as ad
from vqjscc.autodiff import Tensor
from vqjscc.errors import ConfigError
from vqjscc.layers import (
    Conv1d, Conv2d, GdnParams, HNGdn, HNLayerNorm, TConv2d, dense_head_size, gdn, hn_ln, igdn,
    lora_head_size, slim_conv1d, slim_conv2d, slim_tconv2d,
)


def _t(a):
    return Tensor(np.asarray(a, dtype=float))


def test_gdn_examples(f64):
    t = _t([[3.0], [4.0]])
    out = gdn(t, _t([1.0, 1.0]), _t(np.eye(2))).data.ravel()
    np.testing.assert_allclose(out, [3 / np.sqrt(10), 4 / np.sqrt(17)], rtol=1e-12)
    x = _t(np.random.default_rng(0).standard_normal((3, 5)))
    np.testing.assert_array_equal(gdn(x, _t(np.ones(3)), _t(np.zeros((3, 3)))).data, x.data)
    np.testing.assert_array_equal(igdn(x, _t(np.ones(3)), _t(np.zeros((3, 3)))).data, x.data)
    sign = gdn(x, _t(np.full(3, 1e-300)), _t(np.eye(3))).data
    np.testing.assert_allclose(sign, np.sign(x.data), rtol=1e-12)
    np.testing.assert_array_equal(igdn(_t([[1.0], [1.0]]), _t([4.0, 4.0]), _t(np.zeros((2, 2)))).data.ravel(), [2, 2])


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10.0), st.integers(0, 2**31 - 1))
def test_igdn_inverts_diagonal_gdn(c, seed):
    with ad.precision("f64"):
        x = _t(np.random.default_rng(seed).standard_normal((2, 4, 6)))
        tau, gamma = _t(np.full(4, c)), _t(np.zeros((4, 4)))
        np.testing.assert_allclose(igdn(gdn(x, tau, gamma), tau, gamma).data, x.data, rtol=1e-12)


def test_gdn_uses_leading_slice(f64, rng):
    x = _t(rng.standard_normal((3, 5)))
    tau = _t(rng.uniform(0.5, 2, 6))
    gamma = _t(rng.uniform(0, 1, (6, 6)))
    sliced = gdn(x, _t(tau.data[:3]), _t(gamma.data[:3, :3])).data
    np.testing.assert_array_equal(gdn(x, tau, gamma).data, sliced)


def test_slim_conv2d_slice_equivalence(f64, rng):
    conv = Conv2d(3, 6, 3, 1, 1, rng)
    x = _t(rng.standard_normal((2, 3, 5, 5)))
    np.testing.assert_array_equal(conv(x, 6).data, ad.conv2d(x, conv.weight, conv.bias, 1, 1).data)
    dense = ad.conv2d(x, _t(conv.weight.data[:4]), _t(conv.bias.data[:4]), 1, 1).data
    np.testing.assert_array_equal(conv(x, 4).data, dense)
    ad.sum(ad.square(conv(x, 4))).backward()
    assert np.all(conv.weight.grad[4:] == 0) and np.all(conv.bias.grad[4:] == 0)
    assert np.all(conv.weight.grad[:4] != 0)
    # finite differences agree that the unused filters have no influence
    probe = lambda w: ad.sum(ad.square(slim_conv2d(x, w, conv.bias, 4, 1, 1)))  # noqa: E731
    coords = np.arange(4 * 27, 6 * 27)
    w = _t(conv.weight.data.copy())
    assert ad.grad_check(probe, w, coords=coords) == 0.0


def test_slim_conv1d_slice_equivalence(f64, rng):
    conv = Conv1d(3, 6, 5, 1, 2, rng)
    x = _t(rng.standard_normal((2, 3, 7)))
    np.testing.assert_array_equal(conv(x).data, ad.conv1d(x, conv.weight, conv.bias, 1, 2).data)
    dense = ad.conv1d(x, _t(conv.weight.data[:2]), _t(conv.bias.data[:2]), 1, 2).data
    np.testing.assert_array_equal(slim_conv1d(x, conv.weight, conv.bias, 2, 1, 2).data, dense)
    ad.sum(ad.square(conv(x, 2))).backward()
    assert np.all(conv.weight.grad[2:] == 0)


def test_slim_tconv2d_reads_leading_input_channels(f64, rng):
    conv = TConv2d(6, 3, 4, 2, 1, rng)
    x = _t(rng.standard_normal((2, 4, 3, 3)))
    wt = _t(conv.weight.data[:, :4].transpose(1, 0, 2, 3).copy())
    np.testing.assert_array_equal(conv(x).data, ad.tconv2d(x, wt, conv.bias, 2, 1).data)
    ad.sum(ad.square(slim_tconv2d(x, conv.weight, conv.bias, 2, 1))).backward()
    assert np.all(conv.weight.grad[:, 4:] == 0)
    with pytest.raises(ConfigError):
        conv(_t(rng.standard_normal((1, 7, 3, 3))))


def test_head_sizes():
    assert lora_head_size(32, 4) == 288
    assert dense_head_size(32) == 1056
    assert dense_head_size(32) / lora_head_size(32, 4) == pytest.approx(3.67, abs=0.01)
    layer = HNGdn(32, 5, 4, np.random.default_rng(0))
    assert layer.hyper.n_out == 288


def _zero_hyper(layer):
    layer.hyper.weight.data[:] = 0
    layer.hyper.bias.data[:] = 0


@pytest.mark.parametrize("inverse", [False, True])
def test_zero_hypernet_is_plain_gdn(f64, rng, inverse):
    layer = HNGdn(5, 5, 2, rng, inverse=inverse)
    _zero_hyper(layer)
    x = _t(rng.standard_normal((2, 3, 4)))
    tau, gamma = layer.base.effective()
    fn = igdn if inverse else gdn
    np.testing.assert_array_equal(layer(x, 7.0, 3).data, fn(x, tau, gamma).data)


def test_zero_hypernet_identity_settings(f64, rng):
    layer = HNGdn(4, 5, 2, rng)
    _zero_hyper(layer)
    layer.base = GdnParams.from_effective(np.ones(4), np.zeros((4, 4)))
    x = _t(rng.standard_normal((1, 4, 6)))
    np.testing.assert_allclose(layer(x, 20.0, 2).data, x.data, rtol=1e-15)


def test_hypernet_separates_snr(f64, rng):
    layer = HNGdn(4, 5, 2, rng)
    layer.hyper.weight.data[-1, :] = 0.3  # probe weight on the eta column
    g1 = layer.adapted(5.0, 2)[1].data
    g2 = layer.adapted(10.0, 2)[1].data
    assert not np.array_equal(g1, g2)


def test_hn_gdn_gradient_through_eta(f64, rng):
    layer = HNGdn(4, 5, 2, rng)
    for p in layer.hyper.parameters():
        p.data = p.data + 0.1 * rng.standard_normal(p.shape)
    x = _t(rng.standard_normal((2, 3, 4)))
    r = _t(rng.standard_normal((2, 3, 4)))
    eta = _t([11.0])
    assert ad.grad_check(lambda e: ad.sum(layer(x, e, 2) * r), eta) < 1e-4


def test_hn_ln_examples(f64, rng):
    layer = HNLayerNorm(4, 5, rng)
    x = rng.standard_normal((3, 4))
    x = (x - x.mean(-1, keepdims=True)) / x.std(-1, keepdims=True)
    out = layer(_t(x), 10.0, 1).data
    np.testing.assert_allclose(out, x * np.sqrt(1 / (1 + 1e-6)), rtol=1e-12)
    beta = _t([0.5, -1.0, 2.0, 0.0])
    const = hn_ln(_t(np.full((2, 4), 3.0)), _t(np.ones(4)), beta).data
    np.testing.assert_allclose(const, np.tile(beta.data, (2, 1)))

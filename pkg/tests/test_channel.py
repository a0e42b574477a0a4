import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vqjscc import channel as ch
from vqjscc.errors import ConfigError, NumericError


def test_select_modulation_boundaries():
    assert ch.select_modulation(10.0) == 2
    assert ch.select_modulation(-2.0) == 1
    assert ch.select_modulation(26.0) == 5
    assert ch.select_modulation(25.999) == 4
    assert ch.select_modulation(5.0) == 2
    with pytest.raises(ConfigError):
        ch.select_modulation(0.0, (5.0, 5.0, 12.0, 20.0))


@pytest.mark.parametrize(
    "N,T,expected",
    [(1024, 256, [256] * 4), (1000, 300, [300, 300, 300, 100]), (100, 1024, [100]), (7, 1, [1] * 7)],
)
def test_partition_examples(N, T, expected):
    assert ch.partition(N, T) == expected


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 5000), st.integers(1, 2000))
def test_partition_properties(N, T):
    p = ch.partition(N, T)
    assert sum(p) == N
    assert len(p) == math.ceil(N / T)
    assert all(t == T for t in p[:-1])
    assert 1 <= p[-1] <= T


def test_sample_realization_resamples_deep_fades():
    rng = np.random.default_rng(0)
    for eta in (-3.0, 0.0, 5.0, 15.0):
        real = ch.sample_realization(4096, 4, 1.0 / ch.db_to_linear(eta), 1.0, rng)
        assert real.U == 1024
        assert np.all(real.eta_db >= ch.DEEP_FADE_DB)
        assert real.eta_a_db == pytest.approx(eta)


def test_sample_realization_deterministic_and_tiny_noise():
    a = ch.sample_realization(300, 7, 0.1, 1.0, np.random.default_rng(9))
    b = ch.sample_realization(300, 7, 0.1, 1.0, np.random.default_rng(9))
    np.testing.assert_array_equal(a.h, b.h)
    assert a.block_lengths == b.block_lengths
    # with almost no noise nothing is ever resampled: the draw equals the raw CN(0,1) draw
    rng = np.random.default_rng(3)
    raw = ch.draw_fading(50, np.random.default_rng(3))
    real = ch.sample_realization(50, 1, 1e-30, 1.0, rng)
    np.testing.assert_array_equal(real.h, raw)
    assert np.all(real.eta_db > 200)


def test_fading_power_statistics():
    h = ch.draw_fading(100_000, np.random.default_rng(1))
    assert abs(np.mean(np.abs(h) ** 2) - 1.0) < 0.01
    real = ch.sample_realization(100_000, 1, 1.0, 1.0, np.random.default_rng(2))
    assert np.mean(np.abs(real.h) ** 2) > 1.0


def test_apply_and_equalize():
    s = np.array([1 + 1j, -0.5j, 2.0])
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(ch.apply(s, 1.0, 0.0, rng), s)
    np.testing.assert_allclose(ch.apply(s, 2j, 0.0, rng), 2j * s)
    np.testing.assert_allclose(ch.equalize(1j * s, 1j), s)
    with pytest.raises(NumericError):
        ch.equalize(s, 0.0)


def test_noise_variance_monte_carlo():
    rng = np.random.default_rng(4)
    s = np.exp(1j * rng.uniform(0, 2 * np.pi, 1_000_000))
    h, sigma2 = 0.5 - 0.3j, 0.2
    r = ch.apply(s, h, sigma2, rng)
    assert abs(np.var(r - h * s) / sigma2 - 1) < 0.01
    e = ch.equalize(r, h)
    assert abs(np.var(e - s) / (sigma2 / abs(h) ** 2) - 1) < 0.01


def test_awgn_realization_is_exact_eta():
    real = ch.awgn_realization(16, 12.3)
    assert real.eta_db[0] == 12.3
    assert real.U == 1


def test_realization_csv():
    real = ch.sample_realization(10, 4, 0.1, 1.0, np.random.default_rng(0))
    buf = io.StringIO()
    real.write_csv(buf)
    rows = buf.getvalue().strip().splitlines()
    assert rows[0] == "block,gain,eta_db,length"
    assert len(rows) == 4
    assert rows[-1].endswith(",2")

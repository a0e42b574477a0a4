import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vqjscc import modem
from vqjscc.errors import ConfigError, EncodingError


@pytest.mark.parametrize("k", range(1, 6))
def test_unit_average_power(k):
    c = modem.build_constellation(k)
    assert c.m == modem.ORDERS[k - 1]
    assert abs(np.mean(np.abs(c.points) ** 2) - 1.0) < 1e-12
    assert sorted(c.gray_map.tolist()) == list(range(c.m))


def test_named_constellations():
    qpsk = modem.build_constellation(2)
    expected = {complex(a, b) / math.sqrt(2) for a in (1, -1) for b in (1, -1)}
    got = {complex(round(p.real, 12), round(p.imag, 12)) for p in qpsk.points}
    assert got == {complex(round(p.real, 12), round(p.imag, 12)) for p in expected}
    levels = np.unique(np.round(modem.build_constellation(3).points.real * math.sqrt(10), 12))
    np.testing.assert_allclose(levels, [-3, -1, 1, 3])
    bpsk = modem.build_constellation(1)
    assert set(bpsk.symbols.real) == {1.0, -1.0}


@pytest.mark.parametrize("k", range(2, 6))
def test_gray_neighbours_differ_in_one_bit(k):
    c = modem.build_constellation(k)
    side = math.isqrt(c.m)
    label = np.empty(c.m, dtype=int)
    label[c.gray_map] = np.arange(c.m)
    grid = label.reshape(side, side)
    for a, b in [(grid[1:, :], grid[:-1, :]), (grid[:, 1:], grid[:, :-1])]:
        assert np.all([bin(int(v)).count("1") == 1 for v in (a ^ b).ravel()])


def test_modulate_examples():
    c = modem.build_constellation(3)
    s = modem.modulate(np.zeros(7, dtype=int), c)
    assert np.all(s == c.symbols[0])
    s = modem.modulate(np.arange(c.m), c, P=4.0)
    assert abs(np.mean(np.abs(s) ** 2) - 4.0) < 1e-12
    with pytest.raises(EncodingError):
        modem.modulate([c.m], c)
    with pytest.raises(ConfigError):
        modem.build_constellation(6)


def test_demodulate_4qam_nearest_point():
    c = modem.build_constellation(2)
    r = 0.9 + 0.1j
    d2 = np.abs(r - c.symbols) ** 2  # exhaustive distance oracle
    z = modem.demodulate(np.array([r]), c)[0]
    assert np.isclose(c.symbols[z], (1 + 1j) / math.sqrt(2))
    assert z == int(np.argmin(d2))
    assert d2[z] == pytest.approx(0.40579, abs=1e-5)
    assert np.sort(d2)[1] == pytest.approx(0.68863, abs=1e-5)


def test_demodulate_ties_and_exact_points():
    c = modem.build_constellation(2)
    assert modem.demodulate(np.array([0j]), c)[0] == 0
    for k in range(1, 6):
        c = modem.build_constellation(k)
        np.testing.assert_array_equal(modem.demodulate(c.symbols, c), np.arange(c.m))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.floats(0.1, 10.0), st.integers(0, 2**31 - 1))
def test_noiseless_round_trip(k, P, seed):
    c = modem.build_constellation(k)
    z = np.random.default_rng(seed).integers(0, c.m, 64)
    np.testing.assert_array_equal(modem.demodulate(modem.modulate(z, c, P), c, P), z)


def test_analytic_ser_values():
    assert modem.analytic_ser(1, 0.0) == pytest.approx(0.0786, abs=1e-4)
    assert modem.analytic_ser(3, 12.0) == pytest.approx(0.109, abs=1e-3)
    for k in range(1, 6):
        assert modem.analytic_ser(k, 80.0) < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.floats(-5, 35), st.floats(0.1, 5))
def test_analytic_ser_decreases_with_snr(k, eta, step):
    assert modem.analytic_ser(k, eta + step) <= modem.analytic_ser(k, eta)


def test_empirical_ser_close_to_analytic():
    rng = np.random.default_rng(5)
    n = 200_000
    p = modem.analytic_ser(3, 12.0)
    emp = modem.empirical_ser(3, 12.0, n, rng)
    assert abs(emp - p) < 4 * math.sqrt(p * (1 - p) / n)

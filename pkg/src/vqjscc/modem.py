"""Gray-labelled BPSK / square M-QAM modems with hard-decision demodulation.

Modulation orders are addressed by a 1-based order index ``k``:
k=1 BPSK, 2 4QAM, 3 16QAM, 4 64QAM, 5 256QAM. Symbol indices are 0-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import erfc

from .errors import ConfigError, EncodingError, NumericError

ORDERS = (2, 4, 16, 64, 256)
K = len(ORDERS)


@dataclass(frozen=True)
class Constellation:
    """Unit-average-power symbol set.

    ``points`` is stored in natural grid order; ``gray_map[j]`` is the
    position in ``points`` that carries symbol index ``j``.
    """

    k: int
    m: int
    points: np.ndarray
    gray_map: np.ndarray

    @property
    def symbols(self) -> np.ndarray:
        """Points ordered by symbol index, i.e. ``points[gray_map]``."""
        return self.points[self.gray_map]


def _gray_inverse(g: np.ndarray) -> np.ndarray:
    b = g.copy()
    shift = g >> 1
    while np.any(shift):
        b ^= shift
        shift >>= 1
    return b


@lru_cache(maxsize=None)
def build_constellation(k: int) -> Constellation:
    if not 1 <= k <= K:
        raise ConfigError(f"order index k must be in [1, {K}], got {k}")
    m = ORDERS[k - 1]
    if m == 2:
        points = np.array([1.0 + 0j, -1.0 + 0j])
        gray_map = np.arange(2)
    else:
        side = math.isqrt(m)
        bits = side.bit_length() - 1
        levels = np.arange(-(side - 1), side, 2, dtype=float)
        norm = math.sqrt(2 * (m - 1) / 3)
        re, im = np.meshgrid(levels, levels, indexing="ij")
        points = ((re + 1j * im) / norm).reshape(-1)
        j = np.arange(m)
        pos_i = _gray_inverse(j >> bits)
        pos_q = _gray_inverse(j & (side - 1))
        gray_map = pos_i * side + pos_q
    points.setflags(write=False)
    gray_map.setflags(write=False)
    return Constellation(k=k, m=m, points=points, gray_map=gray_map)


def modulate(indices, c: Constellation, P: float = 1.0) -> np.ndarray:
    """Map symbol indices to ``sqrt(P)``-scaled constellation points."""
    if P <= 0:
        raise ConfigError(f"symbol power must be positive, got {P}")
    z = np.asarray(indices)
    if z.size and (z.min() < 0 or z.max() >= c.m):
        raise EncodingError(f"symbol index out of range [0, {c.m}): min {z.min()}, max {z.max()}")
    return math.sqrt(P) * c.symbols[z]


def demodulate(received, c: Constellation, P: float = 1.0, chunk: int = 1 << 14) -> np.ndarray:
    """Nearest-point hard decisions; ties go to the lowest symbol index."""
    r = np.asarray(received, dtype=complex).reshape(-1)
    if not np.all(np.isfinite(r)):
        raise NumericError("received samples must be finite")
    ref = math.sqrt(P) * c.symbols
    out = np.empty(r.size, dtype=np.int64)
    for s in range(0, r.size, chunk):
        d = r[s : s + chunk, None] - ref[None, :]
        out[s : s + chunk] = np.argmin(d.real**2 + d.imag**2, axis=1)
    return out.reshape(np.shape(received))


def qfunc(x):
    return 0.5 * erfc(np.asarray(x) / math.sqrt(2))


def analytic_ser(k: int, eta_db: float) -> float:
    """Closed-form hard-decision SER over AWGN at linear SNR 10^(eta_db/10)."""
    m = ORDERS[k - 1] if 1 <= k <= K else None
    if m is None:
        raise ConfigError(f"order index k must be in [1, {K}], got {k}")
    eta = 10.0 ** (eta_db / 10.0)
    if m == 2:
        return float(qfunc(math.sqrt(2 * eta)))
    p = 2 * (1 - 1 / math.sqrt(m)) * qfunc(math.sqrt(3 * eta / (m - 1)))
    return float(1 - (1 - p) ** 2)


def empirical_ser(k: int, eta_db: float, n_symbols: int, rng: np.random.Generator, P: float = 1.0) -> float:
    """Monte-Carlo SER over an AWGN channel with unit gain."""
    c = build_constellation(k)
    z = rng.integers(0, c.m, n_symbols)
    s = modulate(z, c, P)
    sigma2 = P / 10.0 ** (eta_db / 10.0)
    noise = math.sqrt(sigma2 / 2) * (rng.standard_normal(n_symbols) + 1j * rng.standard_normal(n_symbols))
    return float(np.mean(demodulate(s + noise, c, P) != z))

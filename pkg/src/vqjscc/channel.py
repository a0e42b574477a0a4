"""Block-fading / AWGN channel simulation and SNR bookkeeping."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, NumericError

DEEP_FADE_DB = -5.0
DEFAULT_BOUNDARIES = (5.0, 12.0, 20.0, 26.0)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(x)


def validate_boundaries(b: Sequence[float]) -> tuple:
    b = tuple(float(v) for v in b)
    if any(hi <= lo for lo, hi in zip(b, b[1:])):
        raise ConfigError(f"SNR boundaries must be strictly increasing, got {b}")
    return b


def select_modulation(eta_db: float, b: Sequence[float] = DEFAULT_BOUNDARIES) -> int:
    """1-based order index: 1 below b[0], k when b[k-2] <= eta < b[k-1], K at or above b[-1]."""
    k = 1
    for bound in validate_boundaries(b):
        if eta_db >= bound:
            k += 1
        else:
            break
    return k


def partition(N: int, T: int) -> list[int]:
    if N < 1 or T < 1:
        raise ConfigError(f"need N >= 1 and T >= 1, got N={N}, T={T}")
    U = -(-N // T)
    return [T] * (U - 1) + [N - (U - 1) * T]


def draw_fading(n: int, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. CN(0, 1) coefficients."""
    return (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2)


@dataclass(frozen=True)
class ChannelRealization:
    h: np.ndarray
    sigma2: float
    P: float
    block_lengths: tuple
    eta_a_db: float | None = None

    def __post_init__(self):
        if self.eta_a_db is None:
            object.__setattr__(self, "eta_a_db", float(linear_to_db(self.P / self.sigma2)))
        if len(self.h) != len(self.block_lengths):
            raise ConfigError("one fading coefficient per block is required")

    @property
    def U(self) -> int:
        return len(self.block_lengths)

    @property
    def eta_db(self) -> np.ndarray:
        """Per-block SNR, eta_a + 10 log10 |h|^2 (exactly eta_a for unit gain)."""
        return self.eta_a_db + linear_to_db(np.abs(self.h) ** 2)

    def starts(self) -> list[int]:
        return list(np.cumsum((0,) + tuple(self.block_lengths[:-1])))

    def write_csv(self, path_or_file) -> None:
        """Rows: block, gain (|h|^2), eta_db, length."""
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        f = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            w = csv.writer(f)
            w.writerow(["block", "gain", "eta_db", "length"])
            for i, (h, e, t) in enumerate(zip(self.h, self.eta_db, self.block_lengths)):
                w.writerow([i, repr(float(abs(h) ** 2)), repr(float(e)), t])
        finally:
            if own:
                f.close()


def sample_realization(N: int, T: int, sigma2: float, P: float, rng: np.random.Generator) -> ChannelRealization:
    """Draw one fading coefficient per coherence block.

    Blocks whose SNR falls below -5 dB are redrawn individually until they
    clear the threshold.
    """
    if sigma2 <= 0 or P <= 0:
        raise ConfigError(f"need sigma2 > 0 and P > 0, got sigma2={sigma2}, P={P}")
    lengths = partition(N, T)
    h = draw_fading(len(lengths), rng)
    floor = db_to_linear(DEEP_FADE_DB) * sigma2 / P
    for i in range(len(h)):
        while abs(h[i]) ** 2 < floor:
            h[i] = draw_fading(1, rng)[0]
    h.setflags(write=False)
    return ChannelRealization(h=h, sigma2=float(sigma2), P=float(P), block_lengths=tuple(lengths))


def awgn_realization(N: int, eta_db: float, P: float = 1.0) -> ChannelRealization:
    """Single block, unit gain: the static AWGN case."""
    h = np.ones(1, dtype=complex)
    h.setflags(write=False)
    return ChannelRealization(
        h=h, sigma2=P / db_to_linear(eta_db), P=float(P), block_lengths=(N,), eta_a_db=float(eta_db)
    )


def apply(s: np.ndarray, h: complex, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    """h*s + n with n ~ CN(0, sigma2) i.i.d. (sigma2/2 per quadrature)."""
    if sigma2 < 0:
        raise ConfigError(f"noise power must be non-negative, got {sigma2}")
    s = np.asarray(s, dtype=complex)
    n = rng.standard_normal(s.shape) + 1j * rng.standard_normal(s.shape)
    return h * s + math.sqrt(sigma2 / 2) * n


def equalize(received: np.ndarray, h: complex) -> np.ndarray:
    if abs(h) < 1e-12:
        raise NumericError(f"degenerate channel coefficient |h| = {abs(h):.3g}")
    return np.asarray(received) / h

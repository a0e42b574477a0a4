"""Dynamic codebook generation: base codebook -> intra (row) -> inter (column) refinement."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError
from .layers import HNLayerNorm, Linear, Module, PReLU, normalize_eta, param


class AdaptMLP(Module):
    """Linear(d_in+1 -> h) -> PReLU -> Linear(h -> h) -> HN-L(h).

    Each input row is concatenated with the normalized SNR before the first
    layer; rows are processed independently.
    """

    def __init__(self, d_in: int, hidden: int, K: int, rng: np.random.Generator):
        self.fc1 = Linear(d_in + 1, hidden, rng)
        self.act = PReLU()
        self.fc2 = Linear(hidden, hidden, rng)
        self.norm = HNLayerNorm(hidden, K, rng)

    def __call__(self, rows: Tensor, eta_db, k: int) -> Tensor:
        eta_col = ad.expand(normalize_eta(eta_db).reshape(1, 1), (rows.shape[0], 1))
        x = ad.concat([rows, eta_col], axis=1)
        return self.norm(self.fc2(self.act(self.fc1(x))), eta_db, k)


def intra_adapt(C_bar: Tensor, eta_db, mlp: AdaptMLP, k: int) -> Tensor:
    """Refine each codeword (row) of an m x D codebook."""
    return mlp(C_bar, eta_db, k)


def inter_adapt(C_check: Tensor, eta_db, mlp: AdaptMLP, k: int) -> Tensor:
    """Refine each column of an m x D codebook across codewords."""
    return ad.transpose(mlp(ad.transpose(C_check), eta_db, k))


class DynamicCodebook(Module):
    """One base codebook and one intra/inter MLP pair per modulation order."""

    def __init__(self, orders, dims, rng: np.random.Generator):
        if len(orders) != len(dims):
            raise ConfigError("orders and dims must have the same length")
        self.orders = tuple(orders)
        self.dims = tuple(dims)
        K = len(orders)
        self.base = [param(rng.normal(0.0, 1.0 / np.sqrt(d), size=(m, d))) for m, d in zip(orders, dims)]
        self.intra = [AdaptMLP(d, d, K, rng) for d in dims]
        self.inter = [AdaptMLP(m, m, K, rng) for m in orders]

    def generate(self, eta_db, k: int) -> Tensor:
        """Codebook (m_k x D_k) for order index ``k`` at SNR ``eta_db``."""
        if not 1 <= k <= len(self.orders):
            raise ConfigError(f"order index k must be in [1, {len(self.orders)}], got {k}")
        i = k - 1
        C_check = intra_adapt(self.base[i], eta_db, self.intra[i], k)
        return inter_adapt(C_check, eta_db, self.inter[i], k)

    def order_parameters(self, k: int) -> list[Tensor]:
        i = k - 1
        return [self.base[i], *self.intra[i].parameters(), *self.inter[i].parameters()]

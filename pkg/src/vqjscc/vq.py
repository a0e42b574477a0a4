"""Vector quantization, straight-through bridging and the training objective."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError

DEFAULT_ALPHA = (3.0, 2.0, 1.0, 0.7, 0.5)
COMMITMENT_RATIO = 0.25


def _values(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def quantize(Y, C, chunk: int = 4096) -> np.ndarray:
    """Index of the nearest codeword for every row of ``Y`` (ties -> lowest index)."""
    y = _values(Y).astype(np.float64)
    c = _values(C).astype(np.float64)
    if y.ndim != 2 or c.ndim != 2 or y.shape[1] != c.shape[1]:
        raise ShapeError(f"quantize: feature rows {y.shape} do not match codebook {c.shape}")
    out = np.empty(len(y), dtype=np.int64)
    for s in range(0, len(y), chunk):
        d = y[s : s + chunk, None, :] - c[None, :, :]
        out[s : s + chunk] = np.argmin(np.einsum("tmd,tmd->tm", d, d), axis=1)
    return out


def dequantize(z, C):
    """Rows ``C[z]``; differentiable in ``C`` when it is a Tensor."""
    z = np.asarray(z, dtype=np.int64)
    m = C.shape[0]
    if z.size and (z.min() < 0 or z.max() >= m):
        raise IndexError(f"dequantize: index out of range [0, {m})")
    if isinstance(C, Tensor):
        return ad.take(C, z)
    return np.asarray(C)[z]


def ste_bridge(Y: Tensor, Yq) -> Tensor:
    return ad.ste(Y, Yq if isinstance(Yq, Tensor) else Tensor(Yq, dtype=Y.dtype))


def mse(a: Tensor, b: Tensor) -> Tensor:
    return ad.mean(ad.square(a - b))


@dataclass(frozen=True)
class LossWeights:
    alpha: tuple = DEFAULT_ALPHA
    beta: tuple = tuple(COMMITMENT_RATIO * a for a in DEFAULT_ALPHA)

    def __post_init__(self):
        if len(self.alpha) != len(self.beta):
            raise ValueError("alpha and beta must have the same length")
        if min(self.alpha) <= 0 or min(self.beta) <= 0:
            raise ValueError("loss weights must be positive")

    @classmethod
    def from_alpha(cls, alpha: Sequence[float], ratio: float = COMMITMENT_RATIO) -> "LossWeights":
        return cls(tuple(alpha), tuple(ratio * a for a in alpha))


@dataclass
class LossTerms:
    total: Tensor
    reconstruction: Tensor
    codebook: Tensor
    commitment: Tensor


def vqvae_terms(X, X_hat: Tensor, blocks, w: LossWeights) -> LossTerms:
    """Reconstruction MSE plus block-averaged codebook and commitment terms.

    ``blocks`` is a sequence of ``(Y_i, Yq_i, k_i)``; ``Yq_i`` is the
    transmitter-side quantized tensor (dequantized with the sent indices).
    A block may carry two extra arrays ``(Y_sg, Yq_sg)`` that replace the
    stop-gradient targets by constants, which turns the objective into an
    ordinary function with the same gradient (used by finite differences).
    """
    if not blocks:
        raise ValueError("need at least one block")
    X = X if isinstance(X, Tensor) else Tensor(X, dtype=X_hat.dtype)
    U = len(blocks)
    rec = mse(X_hat, X)
    cb = None
    cm = None
    for Y, Yq, k, *frozen in blocks:
        if frozen:
            Y_sg, Yq_sg = (Tensor(a, dtype=Y.dtype) for a in frozen)
        else:
            Y_sg, Yq_sg = ad.detach(Y), ad.detach(Yq)
        c = ad.mul(mse(Yq, Y_sg), w.alpha[k - 1] / U)
        e = ad.mul(mse(Y, Yq_sg), w.beta[k - 1] / U)
        cb = c if cb is None else cb + c
        cm = e if cm is None else cm + e
    return LossTerms(rec + cb + cm, rec, cb, cm)


def vqvae_loss(X, X_hat: Tensor, blocks, w: LossWeights) -> Tensor:
    return vqvae_terms(X, X_hat, blocks, w).total

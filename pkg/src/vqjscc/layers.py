"""Normalization and slimmable layers, plus their hypernetwork-adapted forms.

GDN parameters are stored raw and mapped through softplus to keep the
divisive denominator positive. The hypernetwork offsets are added to the
raw values before that mapping.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

ETA_CENTER_DB = 15.0
ETA_HALF_RANGE_DB = 20.0
EMBED_DIM = 8
LN_EPS = 1e-6


def normalize_eta(eta_db) -> Tensor:
    """Map dB SNR affinely so that [-5, 35] dB lands on [-1, 1]; shape (1,)."""
    if isinstance(eta_db, Tensor):
        return ad.mul(ad.add(eta_db.reshape(1), -ETA_CENTER_DB), 1.0 / ETA_HALF_RANGE_DB)
    return Tensor([(float(eta_db) - ETA_CENTER_DB) / ETA_HALF_RANGE_DB])


def inv_softplus(y):
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(y > 20, y, np.log(np.expm1(y)))


def param(arr) -> Tensor:
    return Tensor(arr, requires_grad=True)


class Module:
    """Parameter container; parameters are discovered from attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{prefix}{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def cast(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.weight = param(_uniform(rng, (d_in, d_out), d_in))
        self.bias = param(_uniform(rng, (d_out,), d_in))

    def __call__(self, x: Tensor) -> Tensor:
        y = ad.matmul(x, self.weight)
        return y + ad.expand(self.bias, y.shape)


class PReLU(Module):
    def __init__(self, slope: float = 0.25):
        self.slope = param([slope])

    def __call__(self, x: Tensor) -> Tensor:
        return ad.prelu(x, self.slope)


# ---------------------------------------------------------------------------
# slimmable convolutions
# ---------------------------------------------------------------------------

def _check_width(d_target: int, d_max: int) -> None:
    if not 1 <= d_target <= d_max:
        raise ConfigError(f"target width {d_target} outside [1, {d_max}]")


def slim_conv2d(x, w: Tensor, b: Tensor, d_target: int, stride: int = 1, pad: int = 0) -> Tensor:
    """conv2d with only the leading ``d_target`` filters of ``w``."""
    _check_width(d_target, w.shape[0])
    return ad.conv2d(x, w[:d_target], b[:d_target], stride, pad)


def slim_conv1d(x, w: Tensor, b: Tensor, d_target: int, stride: int = 1, pad: int = 0) -> Tensor:
    _check_width(d_target, w.shape[0])
    return ad.conv1d(x, w[:d_target], b[:d_target], stride, pad)


def slim_tconv2d(x, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """tconv2d consuming a ``d_target``-channel input via ``w[:, :d_target]``.

    Here ``w`` has layout (D_out, D_max, f, f) and the output has D_out channels.
    """
    d_target = x.shape[-3]
    _check_width(d_target, w.shape[1])
    # adjoint layout expected by tconv2d is (C_in, C_out, f, f)
    wt = ad.transpose(w[:, :d_target], (1, 0, 2, 3))
    return ad.tconv2d(x, wt, b, stride, pad)


class Conv2d(Module):
    def __init__(self, c_in, c_out, f, stride, pad, rng):
        self.stride, self.pad = stride, pad
        fan = c_in * f * f
        self.weight = param(_uniform(rng, (c_out, c_in, f, f), fan))
        self.bias = param(_uniform(rng, (c_out,), fan))

    def __call__(self, x, d_target: int | None = None):
        if d_target is None:
            return ad.conv2d(x, self.weight, self.bias, self.stride, self.pad)
        return slim_conv2d(x, self.weight, self.bias, d_target, self.stride, self.pad)


class TConv2d(Module):
    """Transposed conv stored as (C_out, C_max_in, f, f) so the input side is slimmable."""

    def __init__(self, c_in, c_out, f, stride, pad, rng):
        self.stride, self.pad = stride, pad
        fan = c_in * f * f
        self.weight = param(_uniform(rng, (c_out, c_in, f, f), fan))
        self.bias = param(_uniform(rng, (c_out,), fan))

    def __call__(self, x):
        return slim_tconv2d(x, self.weight, self.bias, self.stride, self.pad)


class Conv1d(Module):
    def __init__(self, c_in, c_out, f, stride, pad, rng):
        self.stride, self.pad = stride, pad
        fan = c_in * f
        self.weight = param(_uniform(rng, (c_out, c_in, f), fan))
        self.bias = param(_uniform(rng, (c_out,), fan))

    def __call__(self, x, d_target: int | None = None):
        d = self.weight.shape[0] if d_target is None else d_target
        return slim_conv1d(x, self.weight, self.bias, d, self.stride, self.pad)


# ---------------------------------------------------------------------------
# GDN / IGDN
# ---------------------------------------------------------------------------

def _divisive_norm(t: Tensor, tau: Tensor, gamma: Tensor, d_target: int | None) -> Tensor:
    """sqrt(tau_d + sum_d' gamma[d', d] t_d'^2) over the channel axis of t.

    ``t`` is (D, P) or (B, D, P); only the leading ``d_target`` slice of
    ``tau`` and ``gamma`` is used.
    """
    d = t.shape[-2]
    if d_target is not None and d_target != d:
        raise ShapeError(f"input has {d} channels but d_target={d_target}")
    _check_width(d, tau.shape[0])
    if tau.shape[0] != d:
        tau, gamma = tau[:d], gamma[:d, :d]
    norm = ad.matmul(ad.transpose(gamma), ad.square(t))
    return ad.sqrt(norm + ad.expand(tau.reshape(d, 1), norm.shape))


def _flatten_spatial(t: Tensor, channel_axis: int):
    shape = t.shape
    lead = shape[: channel_axis + 1]
    return t.reshape(lead + (int(np.prod(shape[channel_axis + 1 :], dtype=int)),)), shape


def gdn(t: Tensor, tau: Tensor, gamma: Tensor, d_target: int | None = None) -> Tensor:
    """t / sqrt(tau + gamma^T t^2), per position. ``t`` is (D, P) or (B, D, P)."""
    return ad.div(t, _divisive_norm(t, tau, gamma, d_target))


def igdn(t: Tensor, tau: Tensor, gamma: Tensor, d_target: int | None = None) -> Tensor:
    return ad.mul(t, _divisive_norm(t, tau, gamma, d_target))


class GdnParams(Module):
    """Raw GDN parameters; ``effective()`` applies the softplus map."""

    def __init__(self, d_max: int, tau_init: float = 1.0, gamma_diag: float = 0.1, gamma_off: float = 1e-3):
        tau = np.full(d_max, tau_init)
        gamma = np.full((d_max, d_max), gamma_off)
        np.fill_diagonal(gamma, gamma_diag)
        self.tau = param(inv_softplus(tau))
        self.gamma = param(inv_softplus(gamma))

    @classmethod
    def from_effective(cls, tau, gamma) -> "GdnParams":
        """Build raw values that map exactly (zeros become -inf) to ``tau``, ``gamma``."""
        p = cls.__new__(cls)
        p.tau = param(inv_softplus(tau))
        p.gamma = param(inv_softplus(gamma))
        return p

    @property
    def d_max(self) -> int:
        return self.tau.shape[0]

    def effective(self, dtau: Tensor | None = None, dgamma: Tensor | None = None):
        tau = self.tau if dtau is None else self.tau + dtau
        gamma = self.gamma if dgamma is None else self.gamma + dgamma
        return ad.softplus(tau), ad.softplus(gamma)


class HyperNet(Module):
    """Embed k, append normalized eta, apply one affine map.

    ``zero_init`` zeroes the affine map; ``seed_cols`` lists output columns
    that instead get small random weights (used to break the U*V symmetry).
    """

    def __init__(self, n_out: int, K: int, rng: np.random.Generator, embed_dim: int = EMBED_DIM, seed_cols=None):
        self.embed = param(rng.normal(0.0, 1.0, size=(K, embed_dim)))
        w = np.zeros((embed_dim + 1, n_out))
        b = np.zeros(n_out)
        if seed_cols is not None:
            cols = np.arange(n_out)[seed_cols]
            w[:, cols] = rng.normal(0.0, 0.1 / np.sqrt(embed_dim + 1), size=(embed_dim + 1, len(cols)))
            b[cols] = rng.normal(0.0, 0.1, size=len(cols))
        self.weight = param(w)
        self.bias = param(b)

    @property
    def n_out(self) -> int:
        return self.bias.shape[0]

    def __call__(self, eta_db, k: int) -> Tensor:
        K = self.embed.shape[0]
        if not 1 <= k <= K:
            raise ConfigError(f"order index k must be in [1, {K}], got {k}")
        z = ad.concat([self.embed[k - 1], normalize_eta(eta_db)]).reshape(1, -1)
        return (ad.matmul(z, self.weight) + self.bias.reshape(1, -1)).reshape(-1)


def lora_head_size(d_max: int, rank: int) -> int:
    return 2 * d_max * rank + d_max


def dense_head_size(d_max: int) -> int:
    return d_max * d_max + d_max


class HNGdn(Module):
    """GDN (or IGDN with ``inverse=True``) whose parameters are offset per (eta, k).

    The offsets are a low-rank gamma update U @ V and a tau shift, produced at
    full width and then sliced to the input's channel count.
    """

    def __init__(self, d_max: int, K: int, rank: int, rng: np.random.Generator, inverse: bool = False):
        self.inverse = inverse
        self.rank = rank
        self.base = GdnParams(d_max)
        n_u = d_max * rank
        # V block gets random weights so U receives gradient from the start
        self.hyper = HyperNet(lora_head_size(d_max, rank), K, rng, seed_cols=slice(n_u, 2 * n_u))

    @property
    def d_max(self) -> int:
        return self.base.d_max

    def offsets(self, eta_db, k: int):
        """(U: D_max x r, V: r x D_max, dtau: D_max)."""
        d, r = self.d_max, self.rank
        out = self.hyper(eta_db, k)
        U = out[: d * r].reshape(d, r)
        V = out[d * r : 2 * d * r].reshape(r, d)
        return U, V, out[2 * d * r :]

    def adapted(self, eta_db, k: int):
        U, V, dtau = self.offsets(eta_db, k)
        return self.base.effective(dtau, ad.matmul(U, V))

    def __call__(self, t: Tensor, eta_db, k: int, d_target: int | None = None) -> Tensor:
        """``t`` is (B, D, ...) with D <= D_max; normalization is over axis 1."""
        flat, shape = _flatten_spatial(t, 1)
        tau, gamma = self.adapted(eta_db, k)
        fn = igdn if self.inverse else gdn
        return fn(flat, tau, gamma, d_target).reshape(shape)


class HNLayerNorm(Module):
    """Layer norm over the last axis with (alpha, beta) offset per (eta, k)."""

    def __init__(self, d: int, K: int, rng: np.random.Generator):
        self.alpha = param(np.ones(d))
        self.beta = param(np.zeros(d))
        self.hyper = HyperNet(2 * d, K, rng)

    def __call__(self, t: Tensor, eta_db, k: int) -> Tensor:
        d = self.alpha.shape[0]
        off = self.hyper(eta_db, k)
        return hn_ln(t, self.alpha + off[:d], self.beta + off[d:])


def hn_ln(t: Tensor, alpha: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    """(t - mean) / sqrt(var + eps) * alpha + beta over the last axis."""
    d = t.shape[-1]
    if alpha.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"scale/bias must have shape ({d},), got {alpha.shape}, {beta.shape}")
    mu = ad.expand(ad.mean(t, axis=-1, keepdims=True), t.shape)
    centred = t - mu
    var = ad.mean(ad.square(centred), axis=-1, keepdims=True)
    normed = centred / ad.expand(ad.sqrt(ad.add(var, eps)), t.shape)
    return normed * ad.expand(alpha, t.shape) + ad.expand(beta, t.shape)

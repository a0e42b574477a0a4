"""Outer/inner encoder-decoder and the end-to-end communication passes.

Feature sequences are (B, N, D): one row per transmitted symbol. Unbatched
inputs (C, H, W) / (N, D) are accepted and returned unbatched.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import channel as ch
from . import modem
from .autodiff import Tensor
from .dcg import DynamicCodebook
from .errors import ConfigError, ShapeError
from .layers import Conv1d, Conv2d, HNGdn, Module, PReLU, TConv2d
from .vq import LossWeights, dequantize, quantize, vqvae_terms


@dataclass(frozen=True)
class CodecConfig:
    C: int = 3
    H: int = 16
    W: int = 16
    c1: int = 32
    c2: int = 64
    D: tuple = (4, 8, 16, 24, 32)
    orders: tuple = modem.ORDERS
    boundaries: tuple = ch.DEFAULT_BOUNDARIES
    P: float = 1.0
    rank: int = 4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "D", tuple(int(d) for d in self.D))
        object.__setattr__(self, "orders", tuple(int(m) for m in self.orders))
        object.__setattr__(self, "boundaries", tuple(float(b) for b in self.boundaries))
        self.validate()

    def validate(self) -> None:
        if self.H % 4 or self.W % 4:
            raise ConfigError(f"H and W must be divisible by 4, got {self.H}x{self.W}")
        if any(b <= a for a, b in zip(self.D, self.D[1:])):
            raise ConfigError(f"feature widths D must be strictly increasing, got {self.D}")
        if len(self.D) != len(self.orders) or len(self.boundaries) != len(self.orders) - 1:
            raise ConfigError("need K widths, K orders and K-1 boundaries")
        if tuple(self.orders) != modem.ORDERS[: len(self.orders)]:
            raise ConfigError(f"orders must be a prefix of {modem.ORDERS}")
        ch.validate_boundaries(self.boundaries)
        if self.P <= 0 or self.rank < 1 or min(self.C, self.c1, self.c2) < 1:
            raise ConfigError("P, rank and channel counts must be positive")

    @property
    def K(self) -> int:
        return len(self.orders)

    @property
    def N(self) -> int:
        return self.H * self.W // 16

    @property
    def D_max(self) -> int:
        return self.D[-1]

    def width(self, k: int) -> int:
        return self.D[k - 1]

    def select(self, eta_db: float) -> int:
        return ch.select_modulation(eta_db, self.boundaries)

    def to_dict(self) -> dict:
        return asdict(self)


def _eta_value(eta) -> float:
    return eta.item() if isinstance(eta, Tensor) else float(eta)


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

class ResBlock(Module):
    def __init__(self, c, K, rank, rng):
        self.conv_a = Conv2d(c, c, 3, 1, 1, rng)
        self.norm_a = HNGdn(c, K, rank, rng)
        self.act = PReLU()
        self.conv_b = Conv2d(c, c, 1, 1, 0, rng)
        self.norm_b = HNGdn(c, K, rank, rng)

    def __call__(self, x, eta, k):
        y = self.act(self.norm_a(self.conv_a(x), eta, k))
        return x + self.norm_b(self.conv_b(y), eta, k)


class TResBlock(Module):
    def __init__(self, c, K, rank, rng):
        self.conv_a = TConv2d(c, c, 1, 1, 0, rng)
        self.norm_a = HNGdn(c, K, rank, rng, inverse=True)
        self.act = PReLU()
        self.conv_b = TConv2d(c, c, 3, 1, 1, rng)
        self.norm_b = HNGdn(c, K, rank, rng, inverse=True)

    def __call__(self, x, eta, k):
        y = self.act(self.norm_a(self.conv_a(x), eta, k))
        return x + self.norm_b(self.conv_b(y), eta, k)


class OuterEncoder(Module):
    def __init__(self, cfg: CodecConfig, rng):
        K, r, c1, c2 = cfg.K, cfg.rank, cfg.c1, cfg.c2
        self.conv1, self.norm1, self.act1 = Conv2d(cfg.C, c1, 4, 2, 1, rng), HNGdn(c1, K, r, rng), PReLU()
        self.conv2, self.norm2, self.act2 = Conv2d(c1, c2, 4, 2, 1, rng), HNGdn(c2, K, r, rng), PReLU()
        self.res1, self.act3 = ResBlock(c2, K, r, rng), PReLU()
        self.conv3, self.norm3, self.act4 = Conv2d(c2, c1, 5, 1, 2, rng), HNGdn(c1, K, r, rng), PReLU()
        self.res2, self.act5 = ResBlock(c1, K, r, rng), PReLU()
        self.conv4, self.norm4 = Conv2d(c1, cfg.D_max, 5, 1, 2, rng), HNGdn(cfg.D_max, K, r, rng)

    def __call__(self, X: Tensor, eta, k: int, d: int) -> Tensor:
        x = self.act1(self.norm1(self.conv1(X), eta, k))
        x = self.act2(self.norm2(self.conv2(x), eta, k))
        x = self.act3(self.res1(x, eta, k))
        x = self.act4(self.norm3(self.conv3(x), eta, k))
        x = self.act5(self.res2(x, eta, k))
        x = self.norm4(self.conv4(x, d_target=d), eta, k, d_target=d)
        B = x.shape[0]
        return ad.transpose(x.reshape(B, d, -1), (0, 2, 1))


class OuterDecoder(Module):
    def __init__(self, cfg: CodecConfig, rng):
        K, r, c1, c2 = cfg.K, cfg.rank, cfg.c1, cfg.c2
        self.h4, self.w4 = cfg.H // 4, cfg.W // 4
        self.tconv1, self.norm1, self.act1 = TConv2d(cfg.D_max, c1, 5, 1, 2, rng), HNGdn(c1, K, r, rng, True), PReLU()
        self.tres1, self.act2 = TResBlock(c1, K, r, rng), PReLU()
        self.tconv2, self.norm2, self.act3 = TConv2d(c1, c2, 5, 1, 2, rng), HNGdn(c2, K, r, rng, True), PReLU()
        self.tres2, self.act4 = TResBlock(c2, K, r, rng), PReLU()
        self.tconv3, self.norm3, self.act5 = TConv2d(c2, c1, 4, 2, 1, rng), HNGdn(c1, K, r, rng, True), PReLU()
        self.tconv4, self.norm4 = TConv2d(c1, cfg.C, 4, 2, 1, rng), HNGdn(cfg.C, K, r, rng, True)

    def __call__(self, Y: Tensor, eta, k: int) -> Tensor:
        B, N, d = Y.shape
        if N != self.h4 * self.w4:
            raise ShapeError(f"outer decoder expects {self.h4 * self.w4} feature rows, got {N}")
        x = ad.transpose(Y, (0, 2, 1)).reshape(B, d, self.h4, self.w4)
        x = self.act1(self.norm1(self.tconv1(x), eta, k))
        x = self.act2(self.tres1(x, eta, k))
        x = self.act3(self.norm2(self.tconv2(x), eta, k))
        x = self.act4(self.tres2(x, eta, k))
        x = self.act5(self.norm3(self.tconv3(x), eta, k))
        return self.norm4(self.tconv4(x), eta, k)


class InnerEncoder(Module):
    """K parallel (slim conv1d D_k -> D_max, HN-G D_max); the k(a)-th pair is active."""

    def __init__(self, cfg: CodecConfig, rng):
        self.convs = [Conv1d(d, cfg.D_max, 5, 1, 2, rng) for d in cfg.D]
        self.norms = [HNGdn(cfg.D_max, cfg.K, cfg.rank, rng) for _ in cfg.D]

    def __call__(self, Y: Tensor, eta_i, k_a: int, k_i: int, d_out: int) -> Tensor:
        x = ad.transpose(Y, (0, 2, 1))
        x = self.convs[k_a - 1](x, d_target=d_out)
        x = self.norms[k_a - 1](x, eta_i, k_i, d_target=d_out)
        return ad.transpose(x, (0, 2, 1))


class InnerDecoder(Module):
    """K parallel slim conv1d (D_k -> D_max) and K HN-IG(D_k).

    The k(i)-th conv consumes the received width; its output is sliced to
    D_k(a) and normalized by the k(a)-th HN-IG.
    """

    def __init__(self, cfg: CodecConfig, rng):
        self.convs = [Conv1d(d, cfg.D_max, 5, 1, 2, rng) for d in cfg.D]
        self.norms = [HNGdn(d, cfg.K, cfg.rank, rng, inverse=True) for d in cfg.D]

    def __call__(self, Y: Tensor, eta_i, k_i: int, k_a: int, d_out: int) -> Tensor:
        x = ad.transpose(Y, (0, 2, 1))
        x = self.convs[k_i - 1](x, d_target=d_out)
        x = self.norms[k_a - 1](x, eta_i, k_i)
        return ad.transpose(x, (0, 2, 1))


def _identity_conv1d(conv: Conv1d) -> None:
    w = np.zeros_like(conv.weight.data)
    n = min(w.shape[0], w.shape[1])
    w[np.arange(n), np.arange(n), w.shape[2] // 2] = 1.0
    conv.weight.data = w
    conv.bias.data = np.zeros_like(conv.bias.data)


class JSCCModel(Module):
    """All trainable state: outer codec, inner codec, codebook generator."""

    def __init__(self, cfg: CodecConfig | None = None):
        cfg = cfg or CodecConfig()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.outer_encoder = OuterEncoder(cfg, rng)
        self.outer_decoder = OuterDecoder(cfg, rng)
        self.dcg = DynamicCodebook(cfg.orders, cfg.D, rng)
        self.reset_inner(cfg.seed)
        self.inner_enabled = False

    def reset_inner(self, seed: int) -> None:
        """Fresh inner codec: identity centre taps so the pretrained path starts intact."""
        rng = np.random.default_rng([seed, 1])
        self.inner_encoder = InnerEncoder(self.cfg, rng)
        self.inner_decoder = InnerDecoder(self.cfg, rng)
        for conv in self.inner_encoder.convs + self.inner_decoder.convs:
            _identity_conv1d(conv)

    # parameter groups ------------------------------------------------------
    def groups(self) -> dict[str, list[tuple[str, Tensor]]]:
        return {
            "outer_encoder": list(self.outer_encoder.named_parameters("outer_encoder.")),
            "outer_decoder": list(self.outer_decoder.named_parameters("outer_decoder.")),
            "dcg": list(self.dcg.named_parameters("dcg.")),
            "inner_encoder": list(self.inner_encoder.named_parameters("inner_encoder.")),
            "inner_decoder": list(self.inner_decoder.named_parameters("inner_decoder.")),
        }

    def phase_parameters(self, phase: int) -> list[Tensor]:
        g = self.groups()
        names = ["outer_encoder", "outer_decoder", "dcg"]
        if phase == 2:
            names += ["inner_encoder", "inner_decoder"]
        return [p for n in names for _, p in g[n]]

    # stage functions -------------------------------------------------------
    def outer_encode(self, X, eta_a_db) -> Tensor:
        X, batched = _batch(X, 4)
        cfg = self.cfg
        if X.shape[1:] != (cfg.C, cfg.H, cfg.W):
            raise ShapeError(f"expected images of shape {(cfg.C, cfg.H, cfg.W)}, got {X.shape[1:]}")
        k = cfg.select(_eta_value(eta_a_db))
        Y = self.outer_encoder(X, eta_a_db, k, cfg.width(k))
        return Y if batched else Y.reshape(Y.shape[1:])

    def inner_encode(self, Y_mid, eta_a_db, eta_i_db) -> Tensor:
        Y_mid, batched = _batch(Y_mid, 3)
        k_a, k_i = self.cfg.select(_eta_value(eta_a_db)), self.cfg.select(_eta_value(eta_i_db))
        _expect_width(Y_mid, self.cfg.width(k_a))
        Y = self.inner_encoder(Y_mid, eta_i_db, k_a, k_i, self.cfg.width(k_i))
        return Y if batched else Y.reshape(Y.shape[1:])

    def inner_decode(self, Y_hat, eta_i_db, eta_a_db) -> Tensor:
        Y_hat, batched = _batch(Y_hat, 3)
        k_a, k_i = self.cfg.select(_eta_value(eta_a_db)), self.cfg.select(_eta_value(eta_i_db))
        _expect_width(Y_hat, self.cfg.width(k_i))
        Y = self.inner_decoder(Y_hat, eta_i_db, k_i, k_a, self.cfg.width(k_a))
        return Y if batched else Y.reshape(Y.shape[1:])

    def outer_decode(self, Y_mid, eta_a_db) -> Tensor:
        Y_mid, batched = _batch(Y_mid, 3)
        k = self.cfg.select(_eta_value(eta_a_db))
        _expect_width(Y_mid, self.cfg.width(k))
        X = self.outer_decoder(Y_mid, eta_a_db, k)
        return X if batched else X.reshape(X.shape[1:])


def _batch(x, ndim: int):
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim == ndim:
        return x, True
    if x.ndim == ndim - 1:
        return x.reshape((1,) + x.shape), False
    raise ShapeError(f"expected a {ndim - 1}-d or batched {ndim}-d input, got shape {x.shape}")


def _expect_width(Y: Tensor, d: int) -> None:
    if Y.shape[-1] != d:
        raise ShapeError(f"feature width {Y.shape[-1]} does not match the selected width {d}")


# ---------------------------------------------------------------------------
# communication passes
# ---------------------------------------------------------------------------

@dataclass
class BlockRecord:
    """One coherence block of a pass. ``Y`` and ``Yq`` carry the graph."""

    index: int
    k: int
    eta_db: float
    length: int
    z_tx: np.ndarray
    z_rx: np.ndarray
    offset: np.ndarray
    Y: Tensor = field(repr=False)
    Yq: Tensor = field(repr=False)
    sg_targets: tuple = field(default=(), repr=False)

    @property
    def symbol_errors(self) -> int:
        return int(np.sum(self.z_tx != self.z_rx))

    @property
    def ser(self) -> float:
        return self.symbol_errors / max(self.z_tx.size, 1)


@dataclass
class Replay:
    """Frozen per-block indices, straight-through offsets and stop-gradient targets.

    Replaying a pass turns the training objective into a smooth function
    whose exact gradient is the straight-through / stop-gradient gradient of
    the original pass, which is what finite-difference checks need.
    """

    blocks: list  # (z_tx, z_rx, offset, Y_sg, Yq_sg)


@dataclass
class Pass:
    X_hat: Tensor
    blocks: list
    eta_a_db: float
    k_a: int
    batch: int

    def loss(self, X, weights: LossWeights):
        return vqvae_terms(X, self.X_hat, [(b.Y, b.Yq, b.k, *b.sg_targets) for b in self.blocks], weights)

    def replay(self) -> Replay:
        return Replay([(b.z_tx, b.z_rx, b.offset, b.Y.data.copy(), b.Yq.data.copy()) for b in self.blocks])

    def telemetry(self) -> "Telemetry":
        return Telemetry(
            eta_a_db=self.eta_a_db,
            k_a=self.k_a,
            blocks=[(b.index, b.k, b.eta_db, b.length, b.symbol_errors, b.ser) for b in self.blocks],
            n_symbols=int(sum(b.length for b in self.blocks)),
        )


@dataclass
class Telemetry:
    eta_a_db: float
    k_a: int
    blocks: list  # (index, k, eta_db, length, symbol_errors, ser)
    n_symbols: int

    @property
    def U(self) -> int:
        return len(self.blocks)


def _send_block(model, Y: Tensor, eta_i: float, k_i: int, h: complex, sigma2: float, rng, frozen, index):
    """Generate codebook, quantize, modulate, channel, demodulate, dequantize, bridge."""
    B, T, d = Y.shape
    C = model.dcg.generate(eta_i, k_i)
    flat = Y.reshape(B * T, d)
    sg = ()
    if frozen is None:
        z_tx = quantize(flat, C)
        const = modem.build_constellation(k_i)
        P = model.cfg.P
        s = modem.modulate(z_tx, const, P)
        received = ch.equalize(ch.apply(s, h, sigma2, rng), h)
        z_rx = modem.demodulate(received, const, P)
        Yq_rx = dequantize(z_rx, C)
        offset = Yq_rx.data - flat.data
        dec_in = ad.ste(flat, Yq_rx)
    else:
        z_tx, z_rx, offset, *sg = frozen
        dec_in = flat + Tensor(offset, dtype=flat.dtype)
    Yq_tx = dequantize(z_tx, C)
    rec = BlockRecord(index, k_i, eta_i, T, z_tx, z_rx, offset, flat, Yq_tx, tuple(sg))
    return dec_in.reshape(B, T, d), rec


def forward_awgn(model: JSCCModel, X, eta_a_db: float, rng, replay: Replay | None = None) -> Pass:
    """Single-block pass over a static AWGN channel, no inner codec."""
    X4, _ = _batch(X, 4)
    eta_a = float(eta_a_db)
    k_a = model.cfg.select(eta_a)
    sigma2 = model.cfg.P / ch.db_to_linear(eta_a)
    Y = model.outer_encode(X4, eta_a)
    frozen = replay.blocks[0] if replay is not None else None
    dec_in, rec = _send_block(model, Y, eta_a, k_a, complex(1.0), sigma2, rng, frozen, 0)
    X_hat = model.outer_decode(dec_in, eta_a)
    return Pass(X_hat, [rec], eta_a, k_a, X4.shape[0])


def forward_fading(model: JSCCModel, X, realization: ch.ChannelRealization, rng, replay: Replay | None = None) -> Pass:
    """Block-wise pass: outer encode, per-block inner codec and VQ link, outer decode."""
    X4, _ = _batch(X, 4)
    cfg = model.cfg
    if sum(realization.block_lengths) != cfg.N:
        raise ShapeError(f"realization covers {sum(realization.block_lengths)} symbols, model sends {cfg.N}")
    eta_a = realization.eta_a_db
    k_a = cfg.select(eta_a)
    Y_mid = model.outer_encode(X4, eta_a)
    outs, recs = [], []
    for i, (start, T) in enumerate(zip(realization.starts(), realization.block_lengths)):
        eta_i = float(realization.eta_db[i])
        k_i = cfg.select(eta_i)
        Y_i = Y_mid[:, start : start + T, :]
        if model.inner_enabled:
            Y_i = model.inner_encode(Y_i, eta_a, eta_i)
        elif k_i != k_a:
            raise ConfigError(f"block {i} selects order {k_i} but k(a)={k_a}; enable the inner codec")
        frozen = replay.blocks[i] if replay is not None else None
        dec_in, rec = _send_block(model, Y_i, eta_i, k_i, realization.h[i], realization.sigma2, rng, frozen, i)
        if model.inner_enabled:
            dec_in = model.inner_decode(dec_in, eta_i, eta_a)
        outs.append(dec_in)
        recs.append(rec)
    Y_hat_mid = outs[0] if len(outs) == 1 else ad.concat(outs, axis=1)
    X_hat = model.outer_decode(Y_hat_mid, eta_a)
    return Pass(X_hat, recs, eta_a, k_a, X4.shape[0])


def _finish(p: Pass, X) -> tuple[np.ndarray, Telemetry]:
    x = np.clip(p.X_hat.data, 0.0, 1.0)
    return (x if np.ndim(X) == 4 else x[0]), p.telemetry()


def transmit_awgn(X, eta_a_db: float, model: JSCCModel, rng) -> tuple[np.ndarray, Telemetry]:
    """Inference over AWGN; reconstruction clamped to [0, 1]."""
    with ad.no_grad():
        return _finish(forward_awgn(model, X, eta_a_db, rng), X)


def transmit_fading(X, realization: ch.ChannelRealization, model: JSCCModel, rng) -> tuple[np.ndarray, Telemetry]:
    """Inference over a block-fading realization; reconstruction clamped to [0, 1]."""
    with ad.no_grad():
        return _finish(forward_fading(model, X, realization, rng), X)

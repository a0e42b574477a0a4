"""64-bit central-difference checks for every differentiable layer family.

Each family builds a small random instance, reduces its output to a scalar
with a fixed random projection (so no coordinate gets a structurally tiny
gradient), and compares analytic and finite-difference gradients for the
inputs and every parameter tensor.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from . import channel as ch
from .autodiff import Tensor
from .codec import CodecConfig, JSCCModel, forward_fading
from .errors import NumericError
from .dcg import AdaptMLP, DynamicCodebook, inter_adapt, intra_adapt
from .layers import HNGdn, HNLayerNorm, gdn, igdn
from .vq import LossWeights, dequantize, mse, quantize

TOLERANCE = 1e-4


def check_tensors(loss: Callable[[], Tensor], tensors, rng, max_coords: int | None = None, eps: float = 1e-5, terms=None) -> float:
    """Worst relative error over (a sample of) the coordinates of each tensor."""
    worst = 0.0
    probe = None if terms is None else (lambda _x: terms())
    for t in tensors:
        coords = None
        if max_coords is not None and t.size > max_coords:
            coords = rng.choice(t.size, size=max_coords, replace=False)
        worst = max(worst, ad.grad_check(lambda _x: loss(), t, eps=eps, coords=coords, terms=probe))
    return worst


def directional_check(loss: Callable[[], Tensor], terms: Callable[[], np.ndarray], tensors, rng, eps: float = 1e-5) -> float:
    """Worst relative error of <grad, v> against a central difference along v.

    One random Gaussian direction v per tensor. ``terms`` returns the
    additive summands of the loss; the difference is formed term by term.
    """
    for t in tensors:
        t.grad = None
        t.requires_grad = True
    loss().backward()
    worst = 0.0
    for t in tensors:
        v = rng.standard_normal(t.shape)
        a = float(np.sum((np.zeros(t.shape) if t.grad is None else t.grad) * v))
        base = t.data.copy()
        with ad.no_grad():
            t.data = base + eps * v
            fp = terms()
            t.data = base - eps * v
            fm = terms()
        t.data = base
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise NumericError("non-finite loss during directional check")
        cd = float(np.sum(fp - fm)) / (2 * eps)
        worst = max(worst, abs(a - cd) / max(abs(a), abs(cd), 1e-12))
    return worst


def _conv2d(rng):
    x = Tensor(rng.standard_normal((2, 3, 7, 7)))
    w = Tensor(rng.standard_normal((4, 3, 3, 3)))
    b = Tensor(rng.standard_normal(4))
    r = rng.standard_normal((2, 4, 4, 4))
    return check_tensors(lambda: ad.sum(ad.conv2d(x, w, b, 2, 1) * Tensor(r)), [x, w, b], rng)


def _tconv2d(rng):
    x = Tensor(rng.standard_normal((2, 3, 4, 4)))
    w = Tensor(rng.standard_normal((3, 2, 4, 4)))
    b = Tensor(rng.standard_normal(2))
    r = rng.standard_normal((2, 2, 8, 8))
    return check_tensors(lambda: ad.sum(ad.tconv2d(x, w, b, 2, 1) * Tensor(r)), [x, w, b], rng)


def _conv1d(rng):
    x = Tensor(rng.standard_normal((2, 3, 6)))
    w = Tensor(rng.standard_normal((4, 3, 5)))
    b = Tensor(rng.standard_normal(4))
    r = rng.standard_normal((2, 4, 6))
    return check_tensors(lambda: ad.sum(ad.conv1d(x, w, b, 1, 2) * Tensor(r)), [x, w, b], rng)


def _divisive(fn):
    def run(rng):
        t = Tensor(rng.standard_normal((2, 5, 6)))
        tau = Tensor(rng.uniform(0.2, 1.5, size=6))
        gamma = Tensor(rng.uniform(0.0, 0.5, size=(6, 6)))
        r = rng.standard_normal((2, 5, 6))
        return check_tensors(lambda: ad.sum(fn(t, tau, gamma) * Tensor(r)), [t, tau, gamma], rng)

    return run


def _hn_gdn(inverse):
    def run(rng):
        layer = HNGdn(6, 5, 2, rng, inverse=inverse)
        _generic(layer, rng)
        t = Tensor(rng.standard_normal((2, 5, 3, 2)))
        eta = Tensor([float(rng.uniform(-5, 35))])
        k = int(rng.integers(1, 6))
        r = rng.standard_normal(t.shape)
        return check_tensors(lambda: ad.sum(layer(t, eta, k) * Tensor(r)), [t, eta, *layer.parameters()], rng)

    return run


def _hn_ln(rng):
    layer = HNLayerNorm(5, 5, rng)
    for p in layer.parameters():
        p.data = p.data + 0.1 * rng.standard_normal(p.shape)
    t = Tensor(rng.standard_normal((4, 5)))
    eta = Tensor([float(rng.uniform(-5, 35))])
    r = rng.standard_normal(t.shape)
    return check_tensors(lambda: ad.sum(layer(t, eta, 2) * Tensor(r)), [t, eta, *layer.parameters()], rng)


def _dcg_mlp(adapt):
    def run(rng):
        m, d = 4, 3
        width = d if adapt is intra_adapt else m
        mlp = AdaptMLP(width, width, 5, rng)
        for p in mlp.parameters():
            p.data = p.data + 0.1 * rng.standard_normal(p.shape)
        C = Tensor(rng.standard_normal((m, d)))
        eta = Tensor([float(rng.uniform(-5, 35))])
        r = rng.standard_normal((m, d))
        return check_tensors(lambda: ad.sum(adapt(C, eta, mlp, 3) * Tensor(r)), [C, eta, *mlp.parameters()], rng)

    return run


def _dcg_commitment(rng):
    """Generated codebook -> quantize fixed features -> codebook + commitment terms.

    The stop-gradient targets are frozen at the base point.
    """
    dcg = DynamicCodebook((2, 4), (2, 3), rng)
    for p in dcg.parameters():
        p.data = p.data + 0.1 * rng.standard_normal(p.shape)
    Y = Tensor(rng.standard_normal((6, 3)))
    eta = 13.0
    C0 = dcg.generate(eta, 2)
    z = quantize(Y, C0)
    Y_sg, Yq_sg = Tensor(Y.data.copy()), Tensor(dequantize(z, C0.data))

    def loss():
        Yq = dequantize(z, dcg.generate(eta, 2))
        return mse(Yq, Y_sg) + ad.mul(mse(Y, Yq_sg), 0.25)

    return check_tensors(loss, [Y, *dcg.order_parameters(2)], rng)


def loss_contributions(p, X, w: LossWeights) -> np.ndarray:
    """Per-element summands of the composite loss of a replayed pass."""
    parts = [((p.X_hat.data - X) ** 2 / X.size).ravel()]
    U = len(p.blocks)
    for b in p.blocks:
        Y_sg, Yq_sg = b.sg_targets
        n = b.Y.size
        parts.append((w.alpha[b.k - 1] / (U * n) * (b.Yq.data - Y_sg) ** 2).ravel())
        parts.append((w.beta[b.k - 1] / (U * n) * (b.Y.data - Yq_sg) ** 2).ravel())
    return np.concatenate(parts)


def _generic(model, rng) -> None:
    """Move parameters off their structured initial values.

    At initialization the GDN coupling weights sit deep in the flat tail of
    softplus, which makes their gradients far smaller than the round-off
    floor of a central difference. Random raw values of order one, plus
    slightly amplified conv kernels so activations do not fade through the narrow
    stack, keep every gradient measurable.
    """
    for name, p in model.named_parameters():
        if name.endswith(("base.tau", "base.gamma")):
            p.data = rng.normal(0.0, 0.5, size=p.shape)
        elif name.endswith("weight") and p.ndim >= 3:
            p.data = 1.25 * p.data + 0.05 * rng.standard_normal(p.shape)
        else:
            p.data = p.data + 0.1 * rng.standard_normal(p.shape)


TINY_CODEC = CodecConfig(C=2, H=8, W=8, c1=4, c2=6, D=(2, 3, 4, 5, 6), seed=0)


def _pipeline(rng, eps: float = 1e-5):
    """Full two-block fading pass with inner codec, STE and the composite loss.

    Indices, straight-through offsets and stop-gradient targets are frozen
    from one stochastic pass (a replay), making the loss a smooth function
    whose exact gradient is the training gradient. Every parameter tensor is
    checked along a random direction.
    """
    model = JSCCModel(CodecConfig(**{**TINY_CODEC.to_dict(), "seed": int(rng.integers(1 << 30))}))
    _generic(model, rng)
    model.inner_enabled = True
    X = rng.uniform(0, 1, size=(2, 2, 8, 8))
    gains = np.array([ch.db_to_linear(-7.0), ch.db_to_linear(7.0)])  # blocks at 8 and 22 dB
    h = np.sqrt(gains) * np.exp(1j * rng.uniform(0, 2 * np.pi, size=2))
    real = ch.ChannelRealization(h=h, sigma2=ch.db_to_linear(-15.0), P=1.0, block_lengths=(2, 2))
    w = LossWeights()
    replay = forward_fading(model, X, real, rng).replay()

    def loss():
        return forward_fading(model, X, real, None, replay=replay).loss(X, w).total

    def terms():
        with ad.no_grad():
            return loss_contributions(forward_fading(model, X, real, None, replay=replay), X, w)

    return directional_check(loss, terms, model.parameters(), rng, eps=eps)


FAMILIES: dict[str, Callable] = {
    "conv1d": _conv1d,
    "conv2d": _conv2d,
    "tconv2d": _tconv2d,
    "gdn": _divisive(gdn),
    "igdn": _divisive(igdn),
    "hn_gdn": _hn_gdn(False),
    "hn_igdn": _hn_gdn(True),
    "hn_ln": _hn_ln,
    "dcg_intra": _dcg_mlp(intra_adapt),
    "dcg_inter": _dcg_mlp(inter_adapt),
    "dcg_commitment": _dcg_commitment,
    "pipeline": _pipeline,
}


def run_suite(seeds=range(10), families=None) -> dict[str, float]:
    """Max relative error per family over ``seeds``, computed in 64-bit."""
    names = list(FAMILIES) if families is None else list(families)
    out = {}
    with ad.precision("f64"):
        for name in names:
            out[name] = max(FAMILIES[name](np.random.default_rng([int(s), 7])) for s in seeds)
    return out

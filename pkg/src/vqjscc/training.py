"""Two-phase training: AWGN pretraining of the outer codec and codebook
generator, then block-fading training that adds the inner codec."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import channel as ch
from .codec import JSCCModel, forward_awgn, forward_fading
from .errors import ConfigError, NumericError
from .vq import DEFAULT_ALPHA, LossWeights


@dataclass(frozen=True)
class TrainConfig:
    J: int = 5
    r1: tuple = (-5.0, 5.0, 12.0, 20.0, 26.0, 35.0)
    r2: tuple = (3.0, 8.0, 13.0, 18.0, 23.0, 27.0)
    lambda1: tuple = (1.0, 2.0, 3.0, 6.0, 12.0)
    lambda2: tuple = (1.0, 2.0, 3.0, 6.0, 12.0)
    T_min: int = 64
    T_max: int = 1024
    weights: LossWeights = LossWeights.from_alpha(DEFAULT_ALPHA)
    lr: float = 1e-4
    batch: int = 4
    patience: int = 100
    seed: int = 0

    def __post_init__(self):
        for name in ("r1", "r2", "lambda1", "lambda2"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        for name in ("r1", "r2"):
            r = getattr(self, name)
            if len(r) != self.J + 1:
                raise ConfigError(f"{name} needs J+1={self.J + 1} entries, got {len(r)}")
            if any(b <= a for a, b in zip(r, r[1:])):
                raise ConfigError(f"{name} must be strictly increasing, got {r}")
        for name in ("lambda1", "lambda2"):
            lam = getattr(self, name)
            if len(lam) != self.J or min(lam) <= 0:
                raise ConfigError(f"{name} needs J={self.J} positive entries, got {lam}")
        if not 1 <= self.T_min <= self.T_max:
            raise ConfigError(f"need 1 <= T_min <= T_max, got {self.T_min}, {self.T_max}")
        if self.lr < 0 or self.batch < 1 or self.patience < 1:
            raise ConfigError("lr must be >= 0, batch and patience >= 1")

    def ranges(self, phase: int) -> tuple:
        return self.r1 if phase == 1 else self.r2

    def lambdas(self, phase: int) -> tuple:
        return self.lambda1 if phase == 1 else self.lambda2


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Adaptive moment estimation with bias correction.

    Parameters whose ``grad`` is None are skipped (their moments stay put).
    """

    def __init__(self, params: Sequence[ad.Tensor], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = (p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "lr": self.lr,
            "betas": (self.b1, self.b2),
            "eps": self.eps,
            "m": [a.copy() for a in self.m],
            "v": [a.copy() for a in self.v],
        }

    def load_state_dict(self, state: dict) -> None:
        if len(state["m"]) != len(self.params):
            raise ConfigError("optimizer state does not match the parameter list")
        for p, a in zip(self.params, state["m"]):
            if a.shape != p.shape:
                raise ConfigError(f"optimizer moment shape {a.shape} does not match parameter {p.shape}")
        self.t = int(state["t"])
        self.lr = float(state["lr"])
        self.b1, self.b2 = state["betas"]
        self.eps = float(state["eps"])
        self.m = [a.copy() for a in state["m"]]
        self.v = [a.copy() for a in state["v"]]


# ---------------------------------------------------------------------------
# steps
# ---------------------------------------------------------------------------

def sample_eta(j: int, r: Sequence[float], rng: np.random.Generator) -> float:
    """Uniform draw from the j-th (1-based) subrange [r[j-1], r[j])."""
    if not 1 <= j <= len(r) - 1:
        raise ConfigError(f"subrange index j must be in [1, {len(r) - 1}], got {j}")
    lo, hi = float(r[j - 1]), float(r[j])
    eta = rng.uniform(lo, hi)
    return eta if eta < hi else lo


@dataclass
class StepResult:
    step: int
    phase: int
    losses: list
    total: float
    grad_norm: float
    group_grad_norms: dict
    etas: list


def group_grad_norms(model: JSCCModel) -> dict:
    out = {}
    for name, params in model.groups().items():
        sq = sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for _, p in params if p.grad is not None)
        out[name] = math.sqrt(sq)
    return out


def _pass(model, X, phase, eta, cfg, rng):
    if phase == 1:
        return forward_awgn(model, X, eta, rng)
    T = int(rng.integers(cfg.T_min, cfg.T_max + 1))
    real = ch.sample_realization(model.cfg.N, T, model.cfg.P / ch.db_to_linear(eta), model.cfg.P, rng)
    return forward_fading(model, X, real, rng)


def train_step(X, model: JSCCModel, cfg: TrainConfig, rng, opt: Adam, phase: int, step: int = 0) -> StepResult:
    """One optimizer update on the λ-weighted sum of J per-subrange losses."""
    if phase not in (1, 2):
        raise ConfigError(f"phase must be 1 or 2, got {phase}")
    model.inner_enabled = phase == 2
    r, lam = cfg.ranges(phase), cfg.lambdas(phase)
    model.zero_grad()
    total = None
    losses, etas = [], []
    for j in range(1, cfg.J + 1):
        eta = sample_eta(j, r, rng)
        L = _pass(model, X, phase, eta, cfg, rng).loss(X, cfg.weights).total
        value = L.item()
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss {value} at step {step}, phase {phase}, subrange {j}, eta {eta:.3f} dB")
        losses.append(value)
        etas.append(eta)
        term = ad.mul(L, lam[j - 1])
        total = term if total is None else total + term
    total.backward()
    norms = group_grad_norms(model)
    grad_norm = math.sqrt(sum(v * v for v in norms.values()))
    if not math.isfinite(grad_norm):
        raise NumericError(f"non-finite gradient norm at step {step}, phase {phase}")
    opt.step()
    return StepResult(step, phase, losses, total.item(), grad_norm, norms, etas)


def phase1_step(X, model, cfg, rng, opt) -> StepResult:
    return train_step(X, model, cfg, rng, opt, 1)


def phase2_step(X, model, cfg, rng, opt) -> StepResult:
    return train_step(X, model, cfg, rng, opt, 2)


# ---------------------------------------------------------------------------
# validation and the training loop
# ---------------------------------------------------------------------------

def validate(model: JSCCModel, val_set: np.ndarray, cfg: TrainConfig, phase: int, seed: int = 0) -> float:
    """Mean loss over the set at the subrange midpoints with fixed channel seeds."""
    val_set = np.asarray(val_set)
    if len(val_set) == 0:
        raise ConfigError("validation set is empty")
    model.inner_enabled = phase == 2
    r = cfg.ranges(phase)
    T = (cfg.T_min + cfg.T_max) // 2
    vals = []
    with ad.no_grad():
        for j in range(1, cfg.J + 1):
            eta = 0.5 * (r[j - 1] + r[j])
            rng = np.random.default_rng([seed, j])
            for s in range(0, len(val_set), cfg.batch):
                X = val_set[s : s + cfg.batch]
                if phase == 1:
                    p = forward_awgn(model, X, eta, rng)
                else:
                    real = ch.sample_realization(model.cfg.N, T, model.cfg.P / ch.db_to_linear(eta), model.cfg.P, rng)
                    p = forward_fading(model, X, real, rng)
                vals.append(p.loss(X, cfg.weights).total.item() * len(X))
    return float(sum(vals) / (cfg.J * len(val_set)))


def snapshot(model: JSCCModel) -> dict:
    return {name: p.data.copy() for name, p in model.named_parameters()}


def restore(model: JSCCModel, state: dict) -> None:
    for name, p in model.named_parameters():
        p.data = state[name].copy()


@dataclass
class TrainResult:
    steps: list = field(default_factory=list)
    validations: list = field(default_factory=list)  # (step, metric)
    baseline: float = float("nan")
    best_metric: float = float("inf")
    best_step: int = 0
    best_state: dict | None = None
    stopped_early: bool = False

    @property
    def final_metric(self) -> float:
        return self.validations[-1][1] if self.validations else self.baseline


def log_header(J: int) -> list:
    return ["step", "phase"] + [f"L_{j}" for j in range(1, J + 1)] + ["total", "grad_norm"]


def train(
    model: JSCCModel,
    data: np.ndarray,
    cfg: TrainConfig,
    phase: int,
    steps: int,
    val_set: np.ndarray | None = None,
    val_every: int = 50,
    log_path=None,
    restore_best: bool = True,
    on_step: Callable[[StepResult], None] | None = None,
) -> TrainResult:
    """Run up to ``steps`` updates with validation-patience early stopping.

    A baseline validation precedes the first step; it seeds the best metric
    and does not count toward patience. A validation also runs after the
    last step. With ``restore_best`` the best parameters are loaded back.
    """
    data = np.asarray(data)
    if data.ndim != 4 or len(data) == 0:
        raise ConfigError(f"training data must be a non-empty (n, C, H, W) array, got shape {data.shape}")
    val_set = data if val_set is None else np.asarray(val_set)
    data_rng, step_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(2))
    opt = Adam(model.phase_parameters(phase), lr=cfg.lr)
    res = TrainResult()
    res.baseline = res.best_metric = validate(model, val_set, cfg, phase, cfg.seed)
    res.best_state = snapshot(model)
    stale = 0
    writer = None
    log_file = open(log_path, "w", newline="") if log_path is not None else None
    try:
        if log_file is not None:
            writer = csv.writer(log_file)
            writer.writerow(log_header(cfg.J))
        for step in range(1, steps + 1):
            idx = data_rng.choice(len(data), size=min(cfg.batch, len(data)), replace=False)
            out = train_step(data[np.sort(idx)], model, cfg, step_rng, opt, phase, step)
            res.steps.append(out)
            if writer is not None:
                writer.writerow([step, phase, *(repr(v) for v in out.losses), repr(out.total), repr(out.grad_norm)])
            if on_step is not None:
                on_step(out)
            if step % val_every == 0 or step == steps:
                metric = validate(model, val_set, cfg, phase, cfg.seed)
                res.validations.append((step, metric))
                if metric < res.best_metric:
                    res.best_metric, res.best_step = metric, step
                    res.best_state = snapshot(model)
                    stale = 0
                else:
                    stale += 1
                    if stale >= cfg.patience:
                        res.stopped_early = True
                        break
    finally:
        if log_file is not None:
            log_file.close()
    model.inner_enabled = phase == 2
    if restore_best:
        restore(model, res.best_state)
    return res

"""Sectioned key=value run configuration.

Sections: [run], [codec], [train], [eval], [data]. Lists are comma separated;
``beta`` defaults to a quarter of ``alpha``.
Unknown sections or keys are rejected so typos cannot pass silently.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .codec import CodecConfig
from .errors import ConfigError
from .training import TrainConfig
from .vq import DEFAULT_ALPHA, LossWeights


@dataclass(frozen=True)
class EvalConfig:
    realizations: int = 50
    snr_grid: tuple = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0)
    coherence: tuple = (4, 16)
    n_images: int = 8

    def __post_init__(self):
        if self.realizations < 1 or self.n_images < 1:
            raise ConfigError("realizations and n_images must be >= 1")
        if not self.snr_grid or not self.coherence or min(self.coherence) < 1:
            raise ConfigError("snr_grid must be non-empty and coherence values >= 1")


@dataclass(frozen=True)
class DataConfig:
    path: str = ""
    n_train: int = 64
    n_val: int = 16


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    precision: str = "f32"
    steps: int = 2000
    val_every: int = 100
    codec: CodecConfig = field(default_factory=CodecConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")
        if self.steps < 0 or self.val_every < 1:
            raise ConfigError("steps must be >= 0 and val_every >= 1")
        if self.data.n_train < 1 or self.data.n_val < 1:
            raise ConfigError("n_train and n_val must be >= 1")
        # one seed drives initialization, training and evaluation
        object.__setattr__(self, "codec", replace(self.codec, seed=self.seed))
        object.__setattr__(self, "train", replace(self.train, seed=self.seed))

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed)


_LIST_INT = {"D", "coherence"}
_SCALAR = {
    "run": {"seed": int, "precision": str, "steps": int, "val_every": int},
    "codec": {"C": int, "H": int, "W": int, "c1": int, "c2": int, "D": None, "boundaries": None, "P": float, "rank": int},
    "train": {
        "J": int, "r1": None, "r2": None, "lambda1": None, "lambda2": None, "T_min": int, "T_max": int,
        "alpha": None, "beta": None, "lr": float, "batch": int, "patience": int,
    },
    "eval": {"realizations": int, "snr_grid": None, "coherence": None, "n_images": int},
    "data": {"path": str, "n_train": int, "n_val": int},
}


def _parse_value(section: str, key: str, raw: str):
    kind = _SCALAR[section][key]
    try:
        if kind is not None:
            return kind(raw.strip())
        items = [v.strip() for v in raw.split(",") if v.strip()]
        if key in _LIST_INT:
            return tuple(int(v) for v in items)
        return tuple(float(v) for v in items)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}".splitlines()[0]) from None
    values: dict[str, dict] = {s: {} for s in _SCALAR}
    for section in cp.sections():
        if section not in _SCALAR:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in cp.items(section):
            if key not in _SCALAR[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[section][key] = _parse_value(section, key, raw)
    tr = dict(values["train"])
    alpha = tr.pop("alpha", DEFAULT_ALPHA)
    beta = tr.pop("beta", None)
    try:
        weights = LossWeights.from_alpha(alpha) if beta is None else LossWeights(alpha, beta)
        return RunConfig(
            **values["run"],
            codec=CodecConfig(**values["codec"]),
            train=TrainConfig(weights=weights, **tr),
            eval=EvalConfig(**values["eval"]),
            data=DataConfig(**values["data"]),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(p.read_text())


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_config(cfg: RunConfig) -> str:
    """Fully resolved config text; parsing it back gives an equal RunConfig."""
    w = cfg.train.weights
    sections = {
        "run": {"seed": cfg.seed, "precision": cfg.precision, "steps": cfg.steps, "val_every": cfg.val_every},
        "codec": {k: getattr(cfg.codec, k) for k in _SCALAR["codec"]},
        "train": {
            **{k: getattr(cfg.train, k) for k in _SCALAR["train"] if k not in ("alpha", "beta")},
            "alpha": w.alpha,
            "beta": w.beta,
        },
        "eval": {f.name: getattr(cfg.eval, f.name) for f in fields(cfg.eval)},
        "data": {f.name: getattr(cfg.data, f.name) for f in fields(cfg.data)},
    }
    lines = []
    for name, kv in sections.items():
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {_fmt(v)}" for k, v in kv.items())
        lines.append("")
    return "\n".join(lines)


def write_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(format_config(cfg))

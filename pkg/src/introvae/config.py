"""Hyperparameters, network configuration, resolution presets and run configs.

Run configs are flat ``key = value`` text files. Every key is also a CLI flag
(``latent_dim`` -> ``--latent-dim``); flags override file values. Unknown keys
are rejected.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError


@dataclass(frozen=True)
class HyperParams:
    margin: float = 90.0
    alpha: float = 0.25
    beta: float = 0.0025
    latent_dim: int = 512
    lr: float = 2e-4
    batch_size: int = 8
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.margin < 0 or self.alpha < 0 or self.beta < 0:
            raise ConfigError("margin, alpha and beta must be nonnegative")
        if self.latent_dim <= 0 or self.batch_size <= 0:
            raise ConfigError("latent_dim and batch_size must be positive")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        for b in (self.adam_beta1, self.adam_beta2):
            if not 0.0 < b < 1.0:
                raise ConfigError("Adam moment coefficients must lie in (0, 1)")

    def replace(self, **changes) -> "HyperParams":
        return dataclasses.replace(self, **changes)


# resolution -> (latent_dim, margin, alpha, beta, batch_size)
# 128/256/1024 are the published settings (minibatch sizes from the timing table).
# 16/32/64 are desk-scale settings; 32 was tuned on short synthetic runs (pre-training
# kl_real settles near 24 there) and 16/64 are scaled from it.
PRESETS = {
    16: dict(latent_dim=32, margin=25.0, alpha=0.25, beta=2.0, batch_size=16),
    32: dict(latent_dim=64, margin=50.0, alpha=0.25, beta=2.0, batch_size=16),
    64: dict(latent_dim=128, margin=80.0, alpha=0.25, beta=1.0, batch_size=16),
    128: dict(latent_dim=256, margin=110.0, alpha=0.25, beta=0.5, batch_size=64),
    256: dict(latent_dim=512, margin=120.0, alpha=0.25, beta=0.05, batch_size=32),
    1024: dict(latent_dim=512, margin=90.0, alpha=0.25, beta=0.0025, batch_size=8),
}


def preset_hyperparams(resolution: int, **overrides) -> HyperParams:
    if resolution not in PRESETS:
        raise ConfigError(
            f"no hyperparameter preset for resolution {resolution}; "
            f"available: {sorted(PRESETS)} (or set latent_dim/margin/alpha/beta/batch_size explicitly)"
        )
    values = dict(PRESETS[resolution])
    values.update({k: v for k, v in overrides.items() if v is not None})
    return HyperParams(**values)


def default_channels(resolution: int, base: int = 16, cap: int = 512) -> list:
    """Per-level channel counts from the input level down to the 4x4 level.

    Doubles from ``base`` at full resolution and saturates at ``cap``; at
    1024x1024 with the defaults this gives 16, 32, ..., 512, 512, 512, 512.
    """
    levels = num_levels(resolution)
    return [min(cap, base * 2**i) for i in range(levels + 1)]


def num_levels(resolution: int) -> int:
    if resolution < 16 or resolution & (resolution - 1):
        raise ConfigError(f"resolution must be a power of two >= 16, got {resolution}")
    return int(math.log2(resolution // 4))


@dataclass(frozen=True)
class NetConfig:
    resolution: int = 32
    image_channels: int = 3
    latent_dim: int = 64
    channels: tuple = ()
    activation_slope: float = 0.2

    def __post_init__(self):
        levels = num_levels(self.resolution)
        if not self.channels:
            object.__setattr__(self, "channels", tuple(default_channels(self.resolution)))
        else:
            object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) != levels + 1:
            raise ConfigError(
                f"channel schedule needs {levels + 1} entries for resolution {self.resolution}, "
                f"got {len(self.channels)}"
            )
        if min(self.channels) <= 0 or self.image_channels <= 0 or self.latent_dim <= 0:
            raise ConfigError("channel counts and latent_dim must be positive")

    @property
    def levels(self) -> int:
        return len(self.channels) - 1

    @property
    def image_shape(self) -> tuple:
        return (self.image_channels, self.resolution, self.resolution)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["channels"] = list(self.channels)
        return d


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    # data
    dataset: str = "synthetic"
    synthetic_family: str = "gaussian-blobs"
    n_images: int = 2000
    train_frac: float = 0.8
    val_frac: float = 0.1
    test_frac: float = 0.1
    # network
    resolution: int = 32
    image_channels: int = 3
    latent_dim: Optional[int] = None
    channels: str = ""
    activation_slope: float = 0.2
    # objective / optimizer
    margin: Optional[float] = None
    alpha: Optional[float] = None
    beta: Optional[float] = None
    lr: float = 2e-4
    batch_size: Optional[int] = None
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    # schedule
    epochs_pretrain: int = 1
    epochs_adv: int = 10
    max_steps: int = 0
    checkpoint_every: int = 500
    keep_checkpoints: int = 3
    sample_every: int = 0
    plot: bool = False
    seed: int = 0
    out: str = "runs/default"
    # evaluation / inference
    checkpoint: str = ""
    input: str = ""
    image_a: str = ""
    image_b: str = ""
    n: int = 16
    steps: int = 8
    metrics: str = "pair_diversity,rmse,frechet_score,nearest_neighbors"
    n_pairs: int = 10000
    n_eval: int = 0
    k: int = 5
    sweep_margins: str = ""
    sweep_betas: str = ""
    verify_games: int = 1000
    verify_trials: int = 1000
    tolerance: float = 1e-9

    def hyperparams(self) -> HyperParams:
        explicit = dict(
            latent_dim=self.latent_dim,
            margin=self.margin,
            alpha=self.alpha,
            beta=self.beta,
            batch_size=self.batch_size,
        )
        if self.resolution in PRESETS:
            hp = preset_hyperparams(self.resolution, **explicit)
        else:
            missing = [k for k, v in explicit.items() if v is None]
            if missing:
                raise ConfigError(
                    f"no preset for resolution {self.resolution}; set {', '.join(missing)} explicitly"
                )
            hp = HyperParams(**explicit)
        return hp.replace(lr=self.lr, adam_beta1=self.adam_beta1, adam_beta2=self.adam_beta2)

    def net_config(self) -> NetConfig:
        return NetConfig(
            resolution=self.resolution,
            image_channels=self.image_channels,
            latent_dim=self.hyperparams().latent_dim,
            channels=parse_list(self.channels, int),
            activation_slope=self.activation_slope,
        )

    def resolved(self) -> "RunConfig":
        """Copy with preset-dependent fields filled in."""
        hp = self.hyperparams()
        return dataclasses.replace(
            self,
            latent_dim=hp.latent_dim,
            margin=hp.margin,
            alpha=hp.alpha,
            beta=hp.beta,
            batch_size=hp.batch_size,
            channels=",".join(str(c) for c in self.net_config().channels),
        )

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {'' if v is None else _fmt(v)}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def parse_list(text, typ=float):
    text = (text or "").strip()
    if not text:
        return ()
    return tuple(typ(s) for s in text.replace(";", ",").split(",") if s.strip())


_FIELD_TYPES = {
    "dataset": str, "synthetic_family": str, "channels": str, "out": str, "checkpoint": str,
    "input": str, "image_a": str, "image_b": str, "metrics": str,
    "sweep_margins": str, "sweep_betas": str,
}


def field_type(name: str):
    f = {f.name: f for f in fields(RunConfig)}[name]
    default = f.default
    if name in _FIELD_TYPES:
        return str
    if isinstance(default, bool):
        return bool
    if name in ("latent_dim", "batch_size"):
        return int
    if name in ("margin", "alpha", "beta"):
        return float
    return type(default)


def coerce(name: str, raw):
    if raw is None:
        return None
    typ = field_type(name)
    if isinstance(raw, str):
        raw = raw.strip()
        if raw == "" and typ is not str:
            return None
    try:
        if typ is bool:
            if isinstance(raw, bool):
                return raw
            low = str(raw).lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_config_text(text: str) -> dict:
    known = {f.name for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        values[key] = coerce(key, raw)
    return values


def load_run_config(path=None, overrides=None) -> RunConfig:
    values = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        values.update(parse_config_text(p.read_text()))
    known = {f.name for f in fields(RunConfig)}
    for k, v in (overrides or {}).items():
        if k not in known:
            raise ConfigError(f"unknown config key {k!r}")
        if v is not None:
            values[k] = coerce(k, v)
    cfg = RunConfig(**values)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    fracs = (cfg.train_frac, cfg.val_frac, cfg.test_frac)
    if min(fracs) < 0 or abs(sum(fracs) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be nonnegative and sum to 1, got {fracs}")
    if cfg.epochs_pretrain < 0 or cfg.epochs_adv < 0:
        raise ConfigError("epoch counts must be nonnegative")
    num_levels(cfg.resolution)

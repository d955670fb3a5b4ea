"""Run configuration and its INI-style echo."""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field

from ..exceptions import ConfigError
from ..numerics import ALGORITHM
from ..objectives import LOSS_TYPES
from ..sampler import SamplerConfig

STRATEGIES = ("gen", "dis", "both")


@dataclass
class TrainConfig:
    strategy: str = "both"
    epochs: int = 250
    batch_size: int = 32
    lr: float = 1e-3
    lambda_gen: float = 1.0
    steps: int = 50
    schedule: str = "cosine"
    signal_scale: float = 1.0
    smoothing: float = 0.1
    loss_type: str = "kl"
    seed: int = 0
    dim: int = 64
    hidden: int = 0  # 0: twice dim
    encoder_depth: int = 1
    tau_frame: float = 1.0
    tau_contrast: float = 0.01
    scaled_attention: bool = True
    positional: bool = False

    def validate(self) -> "TrainConfig":
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.loss_type not in LOSS_TYPES:
            raise ConfigError(f"loss_type must be one of {LOSS_TYPES}, got {self.loss_type!r}")
        for name in ("epochs", "batch_size", "steps", "dim", "encoder_depth"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("lr", "signal_scale", "tau_frame", "tau_contrast"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.lambda_gen < 0 or self.hidden < 0:
            raise ConfigError("lambda_gen and hidden must be non-negative")
        if not 0.0 <= self.smoothing < 1.0:
            raise ConfigError("smoothing must lie in [0, 1)")
        if self.dim % 2:
            raise ConfigError("dim must be even")
        return self


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    fusion_weight: float | None = None  # None: 0 for strategy=dis, else 0.5
    eval_seed: int = 0

    def resolved_fusion_weight(self) -> float:
        if self.fusion_weight is not None:
            w = self.fusion_weight
        else:
            w = 0.0 if self.train.strategy == "dis" else 0.5
        if not 0.0 <= w <= 1.0:
            raise ConfigError(f"fusion weight must lie in [0, 1], got {w}")
        return w

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["train"] = {k: _fmt(v) for k, v in dataclasses.asdict(self.train).items()}
        cp["sampler"] = {k: _fmt(v) for k, v in dataclasses.asdict(self.sampler).items()}
        cp["eval"] = {"fusion_weight": _fmt(self.fusion_weight), "eval_seed": _fmt(self.eval_seed),
                      "rng_algorithm": ALGORITHM}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser()
        cp.read_string(text)
        cfg = cls()
        if cp.has_section("train"):
            cfg.train = _fill(TrainConfig, cp["train"])
        if cp.has_section("sampler"):
            cfg.sampler = _fill(SamplerConfig, cp["sampler"])
        if cp.has_section("eval"):
            sec = cp["eval"]
            if "fusion_weight" in sec:
                cfg.fusion_weight = parse_value(sec["fusion_weight"], float | None)
            if "eval_seed" in sec:
                cfg.eval_seed = int(sec["eval_seed"])
        cfg.train.validate()
        return cfg


def _fmt(v) -> str:
    if v is None:
        return "none"
    return repr(v) if isinstance(v, float) else str(v)


def parse_value(raw: str, annotation):
    text = raw.strip()
    ann = str(annotation)
    if text.lower() == "none":
        if "None" not in ann:
            raise ConfigError(f"value may not be none: {raw!r}")
        return None
    try:
        if "bool" in ann:
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if "int" in ann and "float" not in ann:
            return int(text)
        if "float" in ann:
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {raw!r} as {ann}") from exc
    return text


def _fill(klass, section):
    hints = {f.name: f.type for f in dataclasses.fields(klass)}
    kwargs = {}
    for key, raw in section.items():
        if key not in hints:
            raise ConfigError(f"unknown config key {key!r} for {klass.__name__}")
        kwargs[key] = parse_value(raw, hints[key])
    return klass(**kwargs)


def set_sampler_field(sampler: SamplerConfig, key: str, raw: str) -> None:
    hints = {f.name: f.type for f in dataclasses.fields(sampler)}
    if key not in hints:
        raise ConfigError(f"unknown sampler key {key!r}")
    setattr(sampler, key, parse_value(raw, hints[key]))


def set_field(cfg: RunConfig, key: str, raw: str) -> None:
    """Apply one ``key=value`` override, searching train, sampler, then eval fields."""
    for obj in (cfg.train, cfg.sampler):
        hints = {f.name: f.type for f in dataclasses.fields(obj)}
        if key in hints:
            setattr(obj, key, parse_value(raw, hints[key]))
            return
    if key == "fusion_weight":
        cfg.fusion_weight = parse_value(raw, "float | None")
    elif key == "eval_seed":
        cfg.eval_seed = int(raw)
    else:
        raise ConfigError(f"unknown config key {key!r}")

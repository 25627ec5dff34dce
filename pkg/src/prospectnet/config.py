"""Model and run configuration.

Run configs are INI-style text (``[section]`` headers, ``key = value`` lines)
read with :mod:`configparser`.  Unknown keys are rejected so typos surface
early.
"""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields

from .features import PRESETS, TargetConfigError


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    embed_dim: int = 32
    hidden: int = 64
    gru_hidden: int = 32
    n_candidates: int = 16
    top_k: int = 6
    stack_q: int = 1
    include_history_tokens: bool = True
    use_heading: bool = True
    encode_radius: float = 60.0
    huber_delta: float = 1.0
    alpha: float = 1.0
    nms_eps0: float = 2.0
    nms_gamma: float = 0.5
    history_len: int = 10
    horizon: int = 30
    preset: int = 4

    def validate(self) -> "ModelConfig":
        if self.stack_q < 1:
            raise ConfigError("stack_q must be >= 1")
        if min(self.embed_dim, self.hidden, self.gru_hidden, self.n_candidates, self.top_k) < 1:
            raise ConfigError("sizes must be positive")
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if not 0 < self.nms_gamma < 1 or self.nms_eps0 <= 0:
            raise ConfigError("need nms_eps0 > 0 and 0 < nms_gamma < 1")
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown target preset #{self.preset}")
        return self


@dataclass
class TrainConfig:
    lr: float = 1e-3
    steps: int = 2000
    batch_size: int = 4
    seed: int = 0
    clip_norm: float = 10.0


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"model": asdict(self.model), "train": asdict(self.train), "data": dict(self.data)}


# flat aliases accepted in any section
_ALIASES = {"E": "embed_dim", "N": "n_candidates", "K": "top_k", "q_stack": "stack_q"}


def _coerce(cls, name: str, raw: str):
    ftype = {f.name: f.type for f in fields(cls)}[name]
    ftype = ftype if isinstance(ftype, str) else ftype.__name__
    try:
        if ftype == "bool":
            low = raw.strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("1", "true", "yes", "on")
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {ftype}") from None
    return raw


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    cfg = RunConfig()
    model_keys = {f.name for f in fields(ModelConfig)}
    train_keys = {f.name for f in fields(TrainConfig)}
    for section in parser.sections():
        for key, raw in parser.items(section):
            name = _ALIASES.get(key, key)
            if section == "data":
                cfg.data[name] = raw
            elif name in model_keys and section in ("model", "joint", "scoring", "targets"):
                setattr(cfg.model, name, _coerce(ModelConfig, name, raw))
            elif name in train_keys and section in ("train", "optimizer"):
                setattr(cfg.train, name, _coerce(TrainConfig, name, raw))
            else:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
    try:
        cfg.model.validate()
    except TargetConfigError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(cfg: RunConfig) -> str:
    lines = ["[model]"]
    lines += [f"{k} = {v}" for k, v in asdict(cfg.model).items()]
    lines += ["", "[train]"]
    lines += [f"{k} = {v}" for k, v in asdict(cfg.train).items()]
    if cfg.data:
        lines += ["", "[data]"] + [f"{k} = {v}" for k, v in cfg.data.items()]
    return "\n".join(lines) + "\n"

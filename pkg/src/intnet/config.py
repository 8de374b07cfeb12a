"""Experiment configuration: an INI file with [data], [encoder], [tagger], [train], [output].

Relative data paths are resolved against the directory of the config
file. A relative ``run_dir`` is resolved against ``$INTNET_RUN_ROOT`` when
set, otherwise against the config file's directory as well.
"""

from __future__ import annotations

import configparser
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .autodiff import ConfigError
from .data import TASKS
from .encoders import EncoderConfig
from .tagger import TaggerConfig
from .training import TrainConfig

RUN_ROOT_ENV = "INTNET_RUN_ROOT"
SECTIONS = ("data", "encoder", "tagger", "train", "output")
DTYPES = ("float64", "float32")


@dataclass
class DataConfig:
    train: str = ""
    dev: str = ""
    test: str = ""
    task: str = "ner"
    token_column: int = 0
    label_column: int = -1
    embeddings: str = ""
    lowercase_fallback: bool = True
    # hold out this many training sentences as dev when no dev file is given (0 = none)
    dev_sample: int = 0


@dataclass
class OutputConfig:
    run_dir: str = "run"
    dtype: str = "float64"


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    tagger: TaggerConfig = field(default_factory=TaggerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def validate(self) -> "ExperimentConfig":
        if not self.data.train:
            raise ConfigError("[data] train is required")
        if self.data.task not in TASKS:
            raise ConfigError(f"[data] task must be one of {TASKS}, got {self.data.task!r}")
        if self.output.dtype not in DTYPES:
            raise ConfigError(f"[output] dtype must be one of {DTYPES}")
        if self.tagger.hidden_size < 1 or self.tagger.word_dim < 1:
            raise ConfigError("[tagger] hidden_size and word_dim must be positive")
        self.encoder.validate()
        self.train.validate()
        return self

    @property
    def dtype(self):
        return np.dtype(self.output.dtype)

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(DataConfig(**d.get("data", {})), EncoderConfig(**d.get("encoder", {})),
                   TaggerConfig(**d.get("tagger", {})), TrainConfig(**d.get("train", {})),
                   OutputConfig(**d.get("output", {})))


def _coerce(raw: str, default, key):
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    if isinstance(default, list):
        try:
            return [int(v) for v in raw.replace(",", " ").split()]
        except ValueError:
            raise ConfigError(f"{key}: expected integers, got {raw!r}") from None
    return raw.strip()


def _fill(obj, section: configparser.SectionProxy, name: str):
    known = {f.name for f in fields(obj)}
    for key, raw in section.items():
        if key not in known:
            raise ConfigError(f"unknown key [{name}] {key}")
        setattr(obj, key, _coerce(raw, getattr(obj, key), f"[{name}] {key}"))


def _resolve(path: str, base: Path) -> str:
    if not path:
        return ""
    p = Path(path).expanduser()
    return str(p if p.is_absolute() else (base / p).resolve())


def parse_config(text: str, base_dir: Path | str = ".", env=None) -> ExperimentConfig:
    """Parse INI text. ``[encoder] preset`` seeds the encoder fields before other keys apply."""
    env = os.environ if env is None else env
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")

    cfg = ExperimentConfig()
    if parser.has_section("encoder"):
        enc = dict(parser["encoder"])
        if "preset" in enc:
            cfg.encoder = EncoderConfig.preset(enc.pop("preset"))
            parser.remove_option("encoder", "preset")
    for name in SECTIONS:
        if parser.has_section(name):
            _fill(getattr(cfg, name), parser[name], name)

    base = Path(base_dir).resolve()
    for key in ("train", "dev", "test", "embeddings"):
        setattr(cfg.data, key, _resolve(getattr(cfg.data, key), base))
    run_root = Path(env[RUN_ROOT_ENV]).resolve() if env.get(RUN_ROOT_ENV) else base
    cfg.output.run_dir = _resolve(cfg.output.run_dir, run_root)
    return cfg.validate()


def load_config(path, env=None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    return parse_config(text, path.parent, env)

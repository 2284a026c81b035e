"""Pipeline configuration: packaged YAML defaults, a user file, env overrides and a seed."""

from __future__ import annotations

import copy
import os
import re
from dataclasses import dataclass, fields
from importlib import resources
from typing import Mapping

import yaml

from .augmentor import AugmentConfig
from .bri_model import BriTrainConfig
from .brs_model import FineTuneConfig
from .corpus import FilterConfig
from .disentangler import LinkTrainConfig
from .encoder import EncoderConfig
from .errors import ConfigError

ENV_PREFIX = "BUGLISTENER_"
SECTIONS = ("paths", "preprocess", "disentangle", "augment", "encoder", "bri", "brs")


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-4`` style floats (YAML 1.1 needs a dot)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*(?:\.[0-9_]*)?|\.[0-9_]+)[eE][-+]?[0-9]+$"),
    list("-+0123456789."),
)


def load_yaml(text):
    return yaml.load(text, Loader=_Loader)


def default_config_dict() -> dict:
    text = resources.files("buglistener.data").joinpath("default_config.yaml").read_text()
    return load_yaml(text)


def _merge(base: dict, override: Mapping, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{where}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, Mapping):
                raise ConfigError(f"config key {path!r} must be a mapping")
            out[key] = _merge(base[key], value, path + ".")
        else:
            out[key] = value
    return out


def env_overrides(environ: Mapping[str, str]) -> dict:
    """``BUGLISTENER_BRI__LR=1e-3`` becomes ``{"bri": {"lr": 0.001}}``.

    Variables without a double underscore (such as the kernel switch) are
    not config keys and are ignored; values are parsed as YAML scalars.
    """
    out: dict = {}
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX) or "__" not in name[len(ENV_PREFIX):]:
            continue
        keys = name[len(ENV_PREFIX):].lower().split("__")
        try:
            value = load_yaml(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {name}: {exc}") from None
        node = out
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = value
    if "seed" in out:
        raise ConfigError(f"set the seed with {ENV_PREFIX}SEED or --seed")
    if f"{ENV_PREFIX}SEED" in environ:
        out["seed"] = load_yaml(environ[f"{ENV_PREFIX}SEED"])
    return out


def _build(cls, values: dict, section: str, **extra):
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")
    try:
        return cls(**values, **extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {section} settings: {exc}") from None


@dataclass
class PipelineConfig:
    seed: int
    paths: dict
    preprocess: dict
    disentangle: dict
    augment: dict
    encoder: dict
    bri: dict
    brs: dict

    @classmethod
    def load(cls, path=None, seed: int | None = None, environ: Mapping[str, str] | None = None,
             output: str | None = None) -> "PipelineConfig":
        data = default_config_dict()
        if path is not None:
            if not os.path.isfile(path):
                raise ConfigError(f"config file {path} does not exist")
            try:
                with open(path, encoding="utf-8") as fh:
                    user = load_yaml(fh) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"malformed config {path}: {exc}") from None
            if not isinstance(user, Mapping):
                raise ConfigError(f"config {path} must be a mapping at the top level")
            data = _merge(data, user)
        data = _merge(data, env_overrides(os.environ if environ is None else environ))
        if seed is not None:
            data["seed"] = seed
        if output is not None:
            data["paths"]["output"] = output
        if not isinstance(data["seed"], int) or isinstance(data["seed"], bool):
            raise ConfigError("seed must be an integer")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        # building every module config surfaces bad keys or values up front
        self.filter_config()
        self.link_config()
        self.augment_config()
        self.encoder_config()
        self.bri_config()
        self.stage1_config()
        self.stage2_config()
        if int(self.brs.get("folds", 0)) < 2:
            raise ConfigError("brs.folds must be at least 2")

    def to_dict(self) -> dict:
        return {"seed": self.seed, **{s: copy.deepcopy(getattr(self, s)) for s in SECTIONS}}

    @property
    def output_dir(self) -> str:
        return self.paths["output"]

    @property
    def checkpoint_dir(self) -> str:
        return self.paths.get("checkpoints") or os.path.join(self.output_dir, "checkpoints")

    def filter_config(self) -> FilterConfig:
        values = dict(self.preprocess)
        values["bot_names"] = frozenset(values.get("bot_names") or ())
        return _build(FilterConfig, values, "preprocess")

    def link_config(self) -> LinkTrainConfig:
        values = {k: v for k, v in self.disentangle.items() if k != "word_dim"}
        return _build(LinkTrainConfig, values, "disentangle", seed=self.seed)

    def augment_config(self) -> AugmentConfig:
        return _build(AugmentConfig, dict(self.augment), "augment", rng_seed=self.seed)

    def encoder_config(self) -> EncoderConfig:
        return _build(EncoderConfig, dict(self.encoder), "encoder", seed=self.seed)

    def bri_config(self) -> BriTrainConfig:
        values = dict(self.bri)
        values["kernel_sizes"] = tuple(values.get("kernel_sizes", (2, 3, 4, 5)))
        return _build(BriTrainConfig, values, "bri", seed=self.seed)

    def stage1_config(self) -> FineTuneConfig:
        return _build(FineTuneConfig, dict(self.brs.get("stage1", {})), "brs.stage1", seed=self.seed)

    def stage2_config(self) -> FineTuneConfig:
        return _build(FineTuneConfig, dict(self.brs.get("stage2", {})), "brs.stage2", seed=self.seed)

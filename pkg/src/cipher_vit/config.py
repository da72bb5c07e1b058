"""JSON run configuration: vit / lora / train / preprocess sections.

Unknown sections or keys are rejected so typos fail loudly instead of
silently training the wrong model.
"""

import dataclasses
import json
from dataclasses import dataclass

from .data import PreprocessSpec
from .errors import ConfigError
from .lora import LoraConfig
from .trainer import TrainConfig
from .vit import TOY_CONFIG, ViTConfig

_SECTIONS = {
    "vit": ViTConfig,
    "lora": LoraConfig,
    "train": TrainConfig,
    "preprocess": PreprocessSpec,
}


@dataclass(frozen=True)
class RunConfig:
    vit: ViTConfig
    lora: LoraConfig
    train: TrainConfig
    preprocess: PreprocessSpec

    def replace(self, **sections):
        return dataclasses.replace(self, **sections)

    def to_dict(self):
        out = {}
        for section, cls in _SECTIONS.items():
            value = getattr(self, section)
            out[section] = {f.name: getattr(value, f.name) for f in dataclasses.fields(cls)}
        # tuples are JSON lists; keep them round-trippable
        for sec in out.values():
            for key, val in sec.items():
                if isinstance(val, tuple):
                    sec[key] = list(val)
        return out


def _build_section(cls, payload, section):
    if not isinstance(payload, dict):
        raise ConfigError(f"section {section!r} must be an object")
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(payload) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in section {section!r}: {unknown}")
    return cls(**payload)


def config_from_dict(payload):
    if not isinstance(payload, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = sorted(set(payload) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config section(s): {unknown}")
    built = {section: _build_section(cls, payload.get(section, {}), section)
             for section, cls in _SECTIONS.items()}
    return RunConfig(**built)


def load_config(path=None, toy=False):
    """Load a config file; toy=True swaps in the small built-in architecture."""
    payload = {}
    if path is not None:
        with open(path) as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    cfg = config_from_dict(payload)
    if toy:
        cfg = cfg.replace(vit=TOY_CONFIG)
    return cfg

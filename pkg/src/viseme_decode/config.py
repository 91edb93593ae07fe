"""Single-file JSON pipeline configuration with dotted ``--set`` overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

from .dataset import MODALITIES, WINDOWS_MS
from .decoder.train import TrainConfig
from .errors import ConfigError, ParseError
from .reconstruct import SequenceConfig
from .synth import SynthConfig

DEFAULTS = {
    "paths": {"raw_dir": "raw", "work_dir": "work"},
    "fs": 1000.0,
    "windows_ms": [64, 128, 256],
    "modalities": ["EEG_EMG", "EEG_ONLY"],
    "filter": {"order": 5, "lo": 30.0, "hi": 499.0, "notch_q": 30.0, "line": 60.0},
    "viseme_map": None,
    "dataset": {"n_test_sentences": 50, "length_mode": "resample", "normalize": "zscore"},
    "synth": {},
    "train": {"epochs": 2},
    "sequence": {},
    "seed": 0,
}

_SECTIONS = {"paths", "filter", "dataset", "synth", "train", "sequence"}


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            if where.rstrip(".") in ("synth", "train", "sequence"):
                out[key] = value  # checked by the stage config classes
                continue
            raise ConfigError(f"unknown config key {where}{key!r}")
        if key in _SECTIONS and key not in ("synth", "train", "sequence"):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where}{key!r} must be an object")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        elif key in ("synth", "train", "sequence"):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {key!r} must be an object")
            out[key] = {**base[key], **value}
        else:
            out[key] = value
    return out


def parse_override(item: str) -> tuple[list[str], object]:
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    try:
        value = json.loads(raw)
    except ValueError:
        value = raw
    return key.split("."), value


def apply_overrides(raw: dict, overrides) -> dict:
    raw = copy.deepcopy(raw)
    for item in overrides or ():
        path, value = parse_override(item)
        node = raw
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {item!r}: {part!r} is not an object")
        node[path[-1]] = value
    return raw


@dataclass(frozen=True)
class PipelineConfig:
    raw: dict

    @classmethod
    def from_dict(cls, d: dict | None = None, overrides=None) -> "PipelineConfig":
        d = apply_overrides(d or {}, overrides)
        merged = _merge(DEFAULTS, d)
        cfg = cls(merged)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, overrides=None) -> "PipelineConfig":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except ValueError as exc:
            raise ParseError(f"config is not valid JSON: {exc}", path) from None
        if not isinstance(d, dict):
            raise ParseError("config must be a JSON object", path)
        return cls.from_dict(d, overrides)

    def validate(self):
        r = self.raw
        for section in ("synth", "train", "sequence"):
            if "seed" in r[section]:
                raise ConfigError(f"{section}.seed is not allowed; set the top-level 'seed'")
        if not isinstance(r["seed"], int) or isinstance(r["seed"], bool):
            raise ConfigError("seed must be an integer")
        bad = [w for w in r["windows_ms"] if w not in WINDOWS_MS]
        if bad or not r["windows_ms"]:
            raise ConfigError(f"windows_ms entries must be drawn from {WINDOWS_MS}")
        bad = [m for m in r["modalities"] if m not in MODALITIES]
        if bad or not r["modalities"]:
            raise ConfigError(f"modalities must be drawn from {MODALITIES}")
        if r["dataset"]["n_test_sentences"] < 0:
            raise ConfigError("dataset.n_test_sentences must be >= 0")
        if r["dataset"]["length_mode"] not in ("resample", "crop_pad"):
            raise ConfigError("dataset.length_mode must be 'resample' or 'crop_pad'")
        if r["dataset"]["normalize"] not in ("zscore", "none"):
            raise ConfigError("dataset.normalize must be 'zscore' or 'none'")
        self.synth_config()
        self.train_config()
        self.sequence_config()

    # typed views, each carrying the global seed
    def synth_config(self) -> SynthConfig:
        return SynthConfig.from_dict({"fs": self.raw["fs"], **self.raw["synth"], "seed": self.seed})

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict({**self.raw["train"], "seed": self.seed})

    def sequence_config(self) -> SequenceConfig:
        return SequenceConfig.from_dict({**self.raw["sequence"], "seed": self.seed})

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def raw_dir(self) -> Path:
        return Path(self.raw["paths"]["raw_dir"])

    @property
    def work_dir(self) -> Path:
        return Path(self.raw["paths"]["work_dir"])

    @property
    def cells(self) -> list[tuple[str, int]]:
        return [(m, int(w)) for m in self.raw["modalities"] for w in self.raw["windows_ms"]]

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=1, sort_keys=True)

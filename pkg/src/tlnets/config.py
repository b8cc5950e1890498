"""Run configuration files: schema, defaults and the resolved echo."""
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import yaml

from .models import ModelConfig
from .training import TrainConfig

__all__ = ["ConfigError", "DataSection", "RunConfig", "load_run_config", "code_version"]


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class DataSection:
    path: str
    date_column: str = "date"
    name: Optional[str] = None
    ratios: tuple = (7, 1, 2)

    @property
    def dataset_name(self):
        return self.name or Path(self.path).stem


_MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"channels", "seed"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed"}
_COUNT_KEYS = {"input_len", "pred_len", "layers", "kernel_size", "expand_channels",
               "batch_size", "max_epochs", "patience", "decay_after"}


@dataclass
class RunConfig:
    data: DataSection
    model: dict
    train: TrainConfig
    output: str = "runs/default"
    seed: int = 0

    def model_config(self, channels):
        return ModelConfig(channels=channels, seed=self.seed, **self.model)

    def to_dict(self):
        train = self.train.to_dict()
        train.pop("seed")
        return {
            "data": {"path": self.data.path, "date_column": self.data.date_column,
                     "name": self.data.dataset_name, "ratios": list(self.data.ratios)},
            "model": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.model.items()},
            "train": train,
            "output": self.output,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a mapping")
        allowed = {"data", "model", "train", "output", "seed"}
        for key in raw:
            if key not in allowed:
                raise ConfigError(key, f"unknown key (allowed: {sorted(allowed)})")
        for key in ("data", "model"):
            if key not in raw:
                raise ConfigError(key, "missing section")
        seed = raw.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("seed", f"must be a nonnegative integer, got {seed!r}")

        data = _section(raw["data"], "data", {f.name for f in fields(DataSection)})
        if "path" not in data:
            raise ConfigError("data.path", "missing")
        if "ratios" in data:
            r = data["ratios"]
            if not isinstance(r, (list, tuple)) or not r or any(
                    not isinstance(v, (int, float)) or v < 0 for v in r) or sum(r) <= 0:
                raise ConfigError("data.ratios", f"must be a list of nonnegative numbers, got {r!r}")
            data["ratios"] = tuple(r)

        model = _section(raw["model"], "model", _MODEL_KEYS)
        if "arch" not in model:
            raise ConfigError("model.arch", "missing")
        for key in ("input_len", "pred_len"):
            if key not in model:
                raise ConfigError(f"model.{key}", "missing")
        _check_counts(model, "model")
        if "band_widths" in model:
            model["band_widths"] = tuple(model["band_widths"])
        try:
            ModelConfig(channels=1, **model)
        except (TypeError, ValueError) as exc:
            raise ConfigError("model", str(exc)) from None

        train_raw = _section(raw.get("train", {}) or {}, "train", _TRAIN_KEYS)
        _check_counts(train_raw, "train")
        try:
            train = TrainConfig(seed=seed, **train_raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError("train", str(exc)) from None

        output = raw.get("output", "runs/default")
        if not isinstance(output, str):
            raise ConfigError("output", "must be a path string")
        return cls(DataSection(**data), model, train, output, seed)


def _section(value, name, allowed):
    if not isinstance(value, dict):
        raise ConfigError(name, "must be a mapping")
    for key in value:
        if key not in allowed:
            raise ConfigError(f"{name}.{key}", f"unknown key (allowed: {sorted(allowed)})")
    return dict(value)


def _check_counts(section, name):
    for key in _COUNT_KEYS & set(section):
        v = section[key]
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise ConfigError(f"{name}.{key}", f"must be an integer >= 1, got {v!r}")


def load_run_config(path):
    try:
        with open(path, encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigError("<file>", f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"invalid YAML in {path}: {exc}") from None
    return RunConfig.from_dict(raw)


def code_version():
    """Short digest of the package sources, so outputs name the code that made them."""
    root = Path(__file__).resolve().parent
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.suffix in (".py", ".csv") and "__pycache__" not in p.parts:
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()[:16]

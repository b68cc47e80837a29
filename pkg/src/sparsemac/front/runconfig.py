"""Run configuration: numeric format, rounding, mode, densities, hardware."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from ..fixedpoint import QFormat
from ..mem import MemoryConfig
from ..perf import AcceleratorConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    qformat: QFormat = field(default_factory=lambda: QFormat(4, 16))
    rounding: str = "stochastic"
    mode: str = "infer"
    density_source: str = "assumed"
    density_value: float = 0.5
    lr: float = 0.03
    epochs: int = 5
    train_samples: int = 2000
    eval_samples: int = 400
    accelerator: AcceleratorConfig = field(default_factory=AcceleratorConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)

    def __post_init__(self):
        if self.rounding not in ("nearest", "stochastic"):
            raise ConfigError(f"rounding must be nearest|stochastic, got {self.rounding!r}")
        if self.mode not in ("train", "infer"):
            raise ConfigError(f"mode must be train|infer, got {self.mode!r}")
        if self.density_source not in ("assumed", "measured"):
            raise ConfigError(f"density source must be assumed|measured, got {self.density_source!r}")
        if not 0.0 <= self.density_value <= 1.0:
            raise ConfigError(f"density must be in [0, 1], got {self.density_value}")
        if self.epochs < 1 or self.train_samples < 1 or self.eval_samples < 1:
            raise ConfigError("epochs and sample counts must be >= 1")


def config_from_dict(obj: dict) -> RunConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    known = {"qformat", "rounding", "mode", "density", "lr", "epochs",
             "train_samples", "eval_samples", "accelerator", "memory",
             "schema_version"}
    for key in obj:
        if key not in known:
            raise ConfigError(f"unknown config field {key!r}")
    kw = {}
    if "qformat" in obj:
        qf = obj["qformat"]
        try:
            kw["qformat"] = QFormat(int(qf["il"]), int(qf["fl"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"qformat: {e}") from None
    for name in ("rounding", "mode", "lr", "epochs", "train_samples", "eval_samples"):
        if name in obj:
            kw[name] = obj[name]
    if "density" in obj:
        d = obj["density"]
        kw["density_source"] = d.get("source", "assumed")
        kw["density_value"] = float(d.get("value", 0.5))
    try:
        if "accelerator" in obj:
            acc = dict(obj["accelerator"])
            if "qformat" in acc:
                acc["qformat"] = QFormat(int(acc["qformat"]["il"]), int(acc["qformat"]["fl"]))
            kw["accelerator"] = AcceleratorConfig(**acc)
        if "memory" in obj:
            kw["memory"] = MemoryConfig(**obj["memory"])
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    cfg = RunConfig(**kw)
    if "accelerator" not in obj or "qformat" not in obj.get("accelerator", {}):
        cfg.accelerator.qformat = cfg.qformat
    return cfg


def parse_config(text: str) -> RunConfig:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e}") from None
    return config_from_dict(obj)


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path) as f:
        return parse_config(f.read())

"""Flat ``key = value`` run configuration with dotted keys.

Lines are ``section.key = value``; ``#`` starts a comment. Every key has a
typed default below; unknown keys and values that do not parse as the
default's type are errors naming the key and line.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .tensor import PatchGeometry
from .train import TrainConfig

log = logging.getLogger(__name__)

DEFAULTS = {
    "model.height": 32,
    "model.width": 32,
    "model.channels": 3,
    "model.patch": 4,
    "model.overlap": 2,
    "model.dim": 64,
    "model.depth": 8,
    "model.expansion": 4,
    "model.num_classes": 10,
    "model.dropout": 0.0,
    "model.disable_overlap": False,
    "model.disable_mdblock": False,
    "model.attn_tool": False,
    "model.dtype": "float32",
    "train.lr": 0.1,
    "train.momentum": 0.9,
    "train.weight_decay": 1e-4,
    "train.batch_size": 128,
    "train.epochs": 200,
    "train.warmup_epochs": 10,
    "train.seed": 0,
    "train.hflip": True,
    "train.color_jitter": True,
    "train.eval_interval": 1,
    "train.max_steps": 0,
    "data.dataset": "cifar10",
    "data.root": "",
    "data.train_limit": 0,
    "data.test_limit": 0,
    "data.synthetic_train": 64,
    "data.synthetic_test": 64,
    "data.synthetic_square": 4,
    "run.name": "run",
    "run.out": "",
    "run.threads": 1,
}

DATASETS = ("cifar10", "cifar100", "synthetic", "flowers102", "food101")
SHIPPED_DIR = "configs"

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _coerce(key: str, text: str, where: str):
    default = DEFAULTS[key]
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{where}: {key} expects {type(default).__name__}, got {text!r}") from None
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        text = text[1:-1]
    return text


def parse_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{where}: unknown key {key!r}")
        values[key] = _coerce(key, value, where)
    return values


def shipped_configs() -> list[str]:
    files = resources.files("mdmlp").joinpath(SHIPPED_DIR).iterdir()
    return sorted(f.name[:-4] for f in files if f.name.endswith(".cfg"))


def read_config_source(name_or_path: str) -> tuple[str, str]:
    """Accept a file path or the name of a shipped config."""
    p = Path(name_or_path)
    if p.is_file():
        return p.read_text(), str(p)
    shipped = resources.files("mdmlp").joinpath(SHIPPED_DIR, f"{name_or_path}.cfg")
    if shipped.is_file():
        return shipped.read_text(), f"{name_or_path}.cfg"
    raise ConfigError(f"no config file or shipped config named {name_or_path!r} (shipped: {shipped_configs()})")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    dtype: str
    dataset: str
    data_root: str
    train_limit: int
    test_limit: int
    synthetic_train: int
    synthetic_test: int
    synthetic_square: int
    name: str
    out_dir: str
    threads: int
    values: dict

    def describe(self) -> str:
        return "\n".join(f"{k} = {self.values[k]}" for k in sorted(self.values))


def resolve(values: dict) -> RunConfig:
    v = dict(DEFAULTS)
    v.update(values)
    try:
        geom = PatchGeometry(v["model.height"], v["model.width"], v["model.channels"], v["model.patch"], v["model.overlap"])
        model = ModelConfig(
            geom=geom,
            dim=v["model.dim"],
            depth=v["model.depth"],
            expansion=v["model.expansion"],
            num_classes=v["model.num_classes"],
            dropout=v["model.dropout"],
            disable_overlap=v["model.disable_overlap"],
            disable_mdblock=v["model.disable_mdblock"],
            attn_tool=v["model.attn_tool"],
        )
    except ConfigError as exc:
        raise ConfigError(f"model config: {exc}") from None
    train = TrainConfig(
        base_lr=v["train.lr"],
        momentum=v["train.momentum"],
        weight_decay=v["train.weight_decay"],
        batch_size=v["train.batch_size"],
        epochs=v["train.epochs"],
        warmup_epochs=v["train.warmup_epochs"],
        seed=v["train.seed"],
        hflip=v["train.hflip"],
        color_jitter=v["train.color_jitter"],
        eval_interval=v["train.eval_interval"],
        max_steps=v["train.max_steps"],
    )
    if v["model.dtype"] not in ("float32", "float64"):
        raise ConfigError(f"model.dtype must be float32 or float64, got {v['model.dtype']!r}")
    if v["data.dataset"] not in DATASETS:
        raise ConfigError(f"data.dataset must be one of {DATASETS}, got {v['data.dataset']!r}")
    if v["run.threads"] < 1:
        raise ConfigError("run.threads must be >= 1")
    root = v["data.root"] or os.environ.get("MDMLP_DATA", "")
    out = v["run.out"] or os.path.join("runs", v["run.name"])
    return RunConfig(
        model=model,
        train=train,
        dtype=v["model.dtype"],
        dataset=v["data.dataset"],
        data_root=root,
        train_limit=v["data.train_limit"],
        test_limit=v["data.test_limit"],
        synthetic_train=v["data.synthetic_train"],
        synthetic_test=v["data.synthetic_test"],
        synthetic_square=v["data.synthetic_square"],
        name=v["run.name"],
        out_dir=out,
        threads=v["run.threads"],
        values=v,
    )


def parse_config(source: str | None = None, overrides: list[str] | dict | None = None) -> RunConfig:
    """Load a config file (or shipped config name) and apply ``key=value`` overrides."""
    values = {}
    if source:
        text, origin = read_config_source(source)
        values.update(parse_text(text, origin))
    if isinstance(overrides, dict):
        overrides = [f"{k}={val}" for k, val in overrides.items()]
    for i, item in enumerate(overrides or []):
        values.update(parse_text(item, f"--override[{i}]"))
    run = resolve(values)
    log.info("resolved config:\n%s", run.describe())
    return run

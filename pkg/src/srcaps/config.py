"""Run configuration: flat ``key = value`` files with dotted namespaces.

Example::

    model.B = 7
    model.act = "relu"
    train.epochs = 2000
    loss.name = "mix"
    loss.w_l1 = 0.16
    data.root = "datasets/DIV2K"

The syntax is a subset of TOML. Unknown keys are rejected; every problem is
reported at once.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli

from .errors import ConfigurationError
from .losses import Loss, LossSpec
from .model import ModelConfig
from .train import TrainConfig

_LOSS_PARAM_TYPES = {"win": int, "scales": int}


@dataclass
class DataConfig:
    root: str = ""
    train_split: str = "train"
    valid_split: str = "valid"
    hr_dir: str = "HR"
    lr_dir: str = ""
    pattern: str = "*.png"


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def flat(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in dataclasses.fields(self.model):
            out[f"model.{f.name}"] = getattr(self.model, f.name)
        for f in dataclasses.fields(self.train):
            if f.name == "loss":
                continue
            value = getattr(self.train, f.name)
            if value is not None:
                out[f"train.{f.name}"] = value
        out["loss.name"] = self.train.loss.name
        for k, v in sorted(self.train.loss.params.items()):
            out[f"loss.{k}"] = v
        for f in dataclasses.fields(self.data):
            out[f"data.{f.name}"] = getattr(self.data, f.name)
        return out

    def dumps(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.flat().items())


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    return repr(value)


def _flatten(d: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def parse_text(text: str) -> dict[str, Any]:
    try:
        return _flatten(tomli.loads(text))
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"config syntax error: {exc}") from exc


def _coerce(value: Any, target: type, key: str, errors: list[str]) -> Any:
    try:
        if target is bool:
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
                return value.lower() in ("true", "1", "yes")
            raise ValueError(value)
        if target is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if target is float:
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        errors.append(f"{key}: cannot interpret {value!r} as {target.__name__}")
        return None


def _field_type(cls, name: str) -> type:
    hint = {f.name: f.type for f in dataclasses.fields(cls)}[name]
    hint = hint if isinstance(hint, str) else getattr(hint, "__name__", str(hint))
    for t in (bool, int, float):
        if hint.startswith(t.__name__):
            return t
    return str


def resolve(values: dict[str, Any]) -> RunConfig:
    """Build a validated :class:`RunConfig` from flat dotted keys."""
    errors: list[str] = []
    model_kw, train_kw, data_kw, loss_kw = {}, {}, {}, {}
    loss_name = LossSpec().name
    sections = {"model": (ModelConfig, model_kw), "train": (TrainConfig, train_kw),
                "data": (DataConfig, data_kw)}
    for key, value in values.items():
        head, _, name = key.partition(".")
        if head == "loss":
            if name == "name":
                loss_name = str(value)
            elif name:
                loss_kw[name] = _coerce(value, _LOSS_PARAM_TYPES.get(name, float), key, errors)
            else:
                errors.append(f"{key}: missing loss parameter name")
            continue
        if head not in sections or not name:
            errors.append(f"{key}: unknown key")
            continue
        cls, kw = sections[head]
        names = {f.name for f in dataclasses.fields(cls)} - {"loss"}
        if name not in names:
            errors.append(f"{key}: unknown key")
            continue
        if name == "grad_clip" and value in (None, "none", ""):
            kw[name] = None
            continue
        kw[name] = _coerce(value, _field_type(cls, name), key, errors)
    if errors:
        raise ConfigurationError("\n".join(errors))
    model = ModelConfig(**model_kw)
    train = TrainConfig(**train_kw, loss=LossSpec(loss_name, loss_kw))
    data = DataConfig(**data_kw)
    errors += [f"model.{p}" for p in model.problems()]
    errors += [f"train.{p}" for p in train.problems()]
    if train.patch_size % model.r:
        errors.append(f"train.patch_size={train.patch_size} not divisible by model.r={model.r}")
    elif train.patch_size // model.r < model.k:
        errors.append(f"train.patch_size={train.patch_size} gives LR patches smaller than "
                      f"model.k={model.k}")
    try:
        Loss(train.loss)
    except ConfigurationError as exc:
        errors.append(f"loss: {exc}")
    if errors:
        raise ConfigurationError("\n".join(errors))
    return RunConfig(model, train, data)


def load(path=None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Read ``path`` (optional), apply ``overrides`` on top and validate."""
    values: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            values.update(parse_text(path.read_text()))
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    values.update(overrides or {})
    return resolve(values)

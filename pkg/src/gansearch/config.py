"""Run configuration: dataclass, TOML loading, overrides."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

ENV_PREFIX = "GANSEARCH_"


class ConfigError(ValueError):
    pass


@dataclass
class SearchConfig:
    # [search]
    P: int = 8
    R: int = 4
    E: int = 2
    warmup_epochs: int = 2
    lr: float = 1e-3
    beta1: float = 0.0
    beta2: float = 0.9
    eps: float = 1e-8
    batch_g: int = 40
    batch_d: int = 80
    n_train: int = 2000
    loss_kind: str = "hinge"
    seed: int = 0
    stage_order: str = "g_first"
    mode: str = "decoupled"
    weight_resetting: bool = True
    reset_moments: bool = False
    fixed_d_genome: str = "default"
    fixed_g_genome: str = "default"
    cycles: int = 1
    p_cross: float = 0.3
    p_mut: float = 0.5
    full_train_epochs: int = 60
    full_train_lr_decay: str = "linear"
    workers: int = 1
    # [space]
    noise_dim: int = 8
    g_dims: tuple[int, ...] = (8, 16, 32, 64)
    d_dims: tuple[int, ...] = (64, 32, 16, 8)
    # [data]
    data: dict = field(default_factory=lambda: {"kind": "ring", "M": 8, "radius": 2.0, "sigma": 0.05})
    # [metrics]
    n_eval: int = 1000
    final_eval: int = 10000
    objectives: tuple[str, ...] = ("fid_like", "inv_is")

    def __post_init__(self):
        self.g_dims = tuple(int(x) for x in self.g_dims)
        self.d_dims = tuple(int(x) for x in self.d_dims)
        self.objectives = tuple(self.objectives)
        self.check()

    def check(self) -> None:
        problems = []
        if self.P < 4 or self.P % 2:
            problems.append("P must be even and >= 4")
        if self.R < 1:
            problems.append("R must be >= 1")
        if self.E < 0:
            problems.append("E must be >= 0")
        if self.warmup_epochs < 0:
            problems.append("warmup_epochs must be >= 0")
        if self.batch_d % 2:
            problems.append("batch_d must be even")
        if self.n_train < self.batch_d // 2:
            problems.append("n_train smaller than one batch")
        if self.loss_kind not in ("hinge", "minimax"):
            problems.append(f"unknown loss_kind {self.loss_kind!r}")
        if self.stage_order not in ("g_first", "d_first"):
            problems.append(f"unknown stage_order {self.stage_order!r}")
        if self.mode not in ("decoupled", "coupled"):
            problems.append(f"unknown mode {self.mode!r}")
        if self.cycles < 1:
            problems.append("cycles must be >= 1")
        bad = [o for o in self.objectives if o not in ("fid_like", "inv_is", "size")]
        if bad or not self.objectives:
            problems.append(f"bad objectives {self.objectives}")
        if self.full_train_lr_decay not in ("linear", "none"):
            problems.append(f"unknown full_train_lr_decay {self.full_train_lr_decay!r}")
        if self.n_eval < 100:
            problems.append("n_eval must be >= 100")
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        for k in ("g_dims", "d_dims", "objectives"):
            d[k] = list(d[k])
        return d

    def replace(self, **changes) -> "SearchConfig":
        return dataclasses.replace(self, **changes)


SECTIONS = {
    "search": [
        "P", "R", "E", "warmup_epochs", "lr", "beta1", "beta2", "eps", "batch_g", "batch_d", "n_train",
        "loss_kind", "seed", "stage_order", "mode", "weight_resetting", "reset_moments", "fixed_d_genome",
        "fixed_g_genome", "cycles", "p_cross", "p_mut", "full_train_epochs", "full_train_lr_decay", "workers",
    ],
    "space": ["noise_dim", "g_dims", "d_dims"],
    "metrics": ["n_eval", "final_eval", "objectives"],
}

NAMED = {
    "smoke": {},
    "full": {"P": 32, "R": 18, "E": 10, "warmup_epochs": 50, "lr": 2e-4, "n_eval": 5000, "final_eval": 50000},
}

_FIELDS = {f.name: f for f in dataclasses.fields(SearchConfig)}
OBJECTIVE_ALIASES = {"fid": "fid_like", "is": "inv_is", "size": "size", "fid_like": "fid_like", "inv_is": "inv_is"}


def parse_objectives(value) -> tuple[str, ...]:
    items = value.split(",") if isinstance(value, str) else list(value)
    try:
        return tuple(OBJECTIVE_ALIASES[x.strip()] for x in items if x.strip())
    except KeyError as exc:
        raise ConfigError(f"unknown objective {exc}") from None


def _coerce(key: str, value):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    default = _FIELDS[key].default
    if key == "objectives":
        return parse_objectives(value)
    if key == "data":
        if not isinstance(value, dict):
            raise ConfigError("data must be a table")
        return value
    if isinstance(value, str) and not isinstance(default, str):
        value = parse_value(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true/false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if key in ("g_dims", "d_dims"):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key} must be a list")
        return tuple(value)
    return str(value)


def parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def flatten(doc: dict) -> dict:
    flat: dict[str, Any] = {}
    for section, body in doc.items():
        if section == "data":
            flat["data"] = dict(body)
        elif section in SECTIONS:
            for k, v in body.items():
                if k not in SECTIONS[section]:
                    raise ConfigError(f"unknown key {section}.{k}")
                flat[k] = v
        elif section == "base":
            flat["base"] = body
        else:
            raise ConfigError(f"unknown section [{section}]")
    return flat


def build_config(values: dict, base: str = "smoke") -> SearchConfig:
    if base not in NAMED:
        raise ConfigError(f"unknown named config {base!r}")
    merged = dict(NAMED[base])
    merged.update(values)
    try:
        return SearchConfig(**{k: _coerce(k, v) for k, v in merged.items()})
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path | None = None, overrides: dict | None = None, env: dict | None = None) -> SearchConfig:
    values: dict[str, Any] = {}
    base = "smoke"
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if path.suffix == ".json":
            doc = json.loads(text)
            values.update(doc.get("config", doc))
        else:
            try:
                values.update(flatten(tomllib.loads(text)))
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        base = values.pop("base", base)
    for k, v in (env if env is not None else os.environ).items():
        if k.startswith(ENV_PREFIX):
            values[k[len(ENV_PREFIX):]] = v
    values.update(overrides or {})
    return build_config(values, base)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return json.dumps(str(v))


def dump_toml(cfg: SearchConfig) -> str:
    d = cfg.to_dict()
    lines = []
    for section, keys in SECTIONS.items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {_toml_value(d[k])}" for k in keys)
        lines.append("")
    lines.append("[data]")
    lines.extend(f"{k} = {_toml_value(v)}" for k, v in d["data"].items())
    return "\n".join(lines) + "\n"

"""## Experiment configuration

An experiment file is a TOML document read through dynaconf:

```
[run]
name = "kink-dnn"
seed = 0

[system]
kind = "kink"          # kink, lorenz96, linear-gaussian-test or csv
r_var = 0.008

[model]
variant = "etgpssm-dnn"
M = 20

[train]
epochs = 1000

[eval]
horizon = 50
stride = 10

[grid.system]
r_var = [0.0008, 0.008, 0.08, 0.8]

[grid.run]
seed = [0, 1, 2]
```

Every section is optional. Values left out of `[system]` and `[data]` take per-kind defaults.
The config hash identifies a configuration (output location excluded) and is stored in every
artifact of a run.
"""
from __future__ import annotations

import hashlib
import os
import re
import jsonpickle
from dataclasses import asdict, dataclass, field, fields, replace
from dynaconf import Dynaconf, Validator, validator
from typing import Any, Dict, List, Optional

from .misc import canonical
from .models import VARIANTS
from .systems import SYSTEM_KINDS

DATA_KINDS = SYSTEM_KINDS + ["csv"]

KIND_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "kink": {"d_x": 1, "q_var": 0.05, "r_var": 0.008, "T": 600, "standardize": False},
    "lorenz96": {"d_x": 20, "q_var": 0.0, "r_var": 4.0, "T": 300, "standardize": True},
    "linear-gaussian-test": {"d_x": 2, "q_var": 0.1, "r_var": 0.1, "T": 200, "standardize": False},
    "csv": {"d_x": None, "q_var": None, "r_var": None, "T": None, "standardize": True},
}


class ConfigException(Exception):
    """Unreadable or invalid experiment file."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.line = line
        self.column = column


@dataclass
class RunSection:
    name: str = "run"
    seed: int = 0
    output: Optional[str] = None
    """Artifact directory; defaults to `<output_path>/<name>-<variant>-<hash>-s<seed>`."""


@dataclass
class SystemSection:
    kind: str = "kink"
    d_x: Optional[int] = None
    q_var: Optional[float] = None
    r_var: Optional[float] = None
    T: Optional[int] = None
    forcing: float = 8.0
    dt: float = 0.01
    path: Optional[str] = None
    """CSV file, for `kind = "csv"`."""
    columns: Optional[List[str]] = None


@dataclass
class DataSection:
    split: float = 0.5
    standardize: Optional[bool] = None


@dataclass
class ModelSection:
    variant: str = "etgpssm-dnn"
    M: int = 20
    flow: str = "linear"
    psi: float = 1.0
    learn_psi: bool = False
    q_init: float = 0.1
    r_init: float = 0.1
    """Initial observation noise, as a fraction of the empirical observation variance."""
    include_r: bool = True
    learn_c: bool = False


@dataclass
class TrainSection:
    epochs: int = 1000
    lr: float = 0.005
    n_ensemble: int = 200
    patience: int = 50
    window: int = 10
    mc_samples: int = 1


@dataclass
class EvalSection:
    n_ensemble: int = 200
    horizon: int = 50
    stride: int = 10
    level: float = 0.95
    fair_crps: bool = False
    forecast: bool = True
    grid_points: int = 200
    """Points of the transition grid written for one-dimensional systems."""


@dataclass
class ExperimentConfig:
    run: RunSection = field(default_factory=RunSection)
    system: SystemSection = field(default_factory=SystemSection)
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    grid: Dict[str, List[Any]] = field(default_factory=dict)
    """Dotted config key (e.g. `system.r_var`) to the list of values to sweep."""

    def resolved(self) -> ExperimentConfig:
        """Fill the per-kind defaults of `[system]` and `[data]`."""
        defaults = KIND_DEFAULTS[self.system.kind]
        system = replace(
            self.system,
            **{k: defaults[k] for k in ("d_x", "q_var", "r_var", "T") if getattr(self.system, k) is None},
        )
        data = self.data
        if data.standardize is None:
            data = replace(data, standardize=defaults["standardize"])
        return replace(self, system=system, data=data)


_SECTION_TYPES = {
    "run": RunSection,
    "system": SystemSection,
    "data": DataSection,
    "model": ModelSection,
    "train": TrainSection,
    "eval": EvalSection,
}

VALIDATORS = [
    Validator("model.variant", is_in=list(VARIANTS)),
    Validator("model.flow", is_in=["linear", "sal"]),
    Validator("model.M", gte=1),
    Validator("system.kind", is_in=DATA_KINDS),
    Validator("system.d_x", gte=1),
    Validator("system.T", gte=1),
    Validator("train.epochs", gte=0),
    Validator("train.n_ensemble", gte=2),
    Validator("train.mc_samples", gte=1),
    Validator("eval.n_ensemble", gte=2),
    Validator("eval.horizon", gte=1),
    Validator("eval.stride", gte=1),
    Validator("data.split", gt=0, lt=1),
]


def _lower(obj):
    if isinstance(obj, dict):
        return {str(k).lower(): _lower(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_lower(x) for x in obj]
    return obj


def _position(error: Exception):
    line, column = getattr(error, "lineno", None), getattr(error, "colno", None)
    if line is None:
        match = re.search(r"line (\d+)[^\d]+(?:column|col) (\d+)", str(error))
        if match:
            line, column = int(match.group(1)), int(match.group(2))
    return line, column


def _section(name: str, values: Dict[str, Any]):
    cls = _SECTION_TYPES[name]
    known = {f.name.lower(): f.name for f in fields(cls)}
    unknown = [k for k in values if k.lower() not in known]
    if unknown:
        raise ConfigException(f"unknown key {name}.{unknown[0]}")
    return cls(**{known[k.lower()]: v for k, v in values.items()})


def _flatten(grid: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat = {}
    for key, value in grid.items():
        name = f"{prefix}.{key}" if prefix else str(key)
        if isinstance(value, dict):
            flat.update(_flatten(value, name))
        else:
            flat[name] = value
    return flat


def canonical_key(key: str) -> str:
    """Dotted `section.field` key with the field's exact spelling; raises if it names no field."""
    parts = key.split(".")
    if len(parts) != 2 or parts[0].lower() not in _SECTION_TYPES:
        raise ConfigException(f"invalid config key {key!r}, expected <section>.<field>")
    section = parts[0].lower()
    known = {f.name.lower(): f.name for f in fields(_SECTION_TYPES[section])}
    if parts[1].lower() not in known:
        raise ConfigException(f"unknown config key {key!r}")
    return f"{section}.{known[parts[1].lower()]}"


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Checks that also apply to values set from the command line or a grid."""
    if cfg.model.variant not in VARIANTS:
        raise ConfigException(f"unknown variant {cfg.model.variant!r}, expected one of {list(VARIANTS)}")
    if cfg.system.kind not in DATA_KINDS:
        raise ConfigException(f"unknown system {cfg.system.kind!r}, expected one of {DATA_KINDS}")
    if cfg.system.kind == "csv" and not cfg.system.path:
        raise ConfigException("system.path is required for csv data")
    if cfg.model.variant == "enkf" and cfg.system.kind == "csv":
        raise ConfigException("the enkf variant needs a synthetic system with known dynamics")
    return cfg


def from_dict(raw: Dict[str, Any]) -> ExperimentConfig:
    raw = {str(k).lower(): v for k, v in raw.items()}
    unknown = [k for k in raw if k not in _SECTION_TYPES and k != "grid"]
    if unknown:
        raise ConfigException(f"unknown section [{unknown[0]}]")
    sections = {name: _section(name, dict(raw.get(name) or {})) for name in _SECTION_TYPES}
    grid = {
        canonical_key(k): list(v) if isinstance(v, (list, tuple)) else [v]
        for k, v in _flatten(dict(raw.get("grid") or {})).items()
    }
    return validate(ExperimentConfig(grid=grid, **sections))


def load_experiment(path: str) -> ExperimentConfig:
    """Read and validate an experiment file."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    try:
        settings = Dynaconf(settings_files=[path], envvar_prefix="EGP_EXPERIMENT", validators=VALIDATORS)
        settings.validators.validate()
        raw = _lower(settings.as_dict())
    except validator.ValidationError as e:
        raise ConfigException(f"{path}: {e}") from e
    except Exception as e:
        line, column = _position(e)
        raise ConfigException(f"{path}: cannot parse ({e})", line, column) from e
    raw = {k: v for k, v in raw.items() if not k.endswith("_for_dynaconf")}
    return from_dict(raw)


def with_overrides(cfg: ExperimentConfig, overrides: Dict[str, Any]) -> ExperimentConfig:
    """Copy of `cfg` with dotted keys (e.g. `{"run.seed": 3}`) replaced; `None` values are ignored."""
    for key, value in overrides.items():
        if value is None:
            continue
        section, name = canonical_key(key).split(".")
        cfg = replace(cfg, **{section: replace(getattr(cfg, section), **{name: value})})
    return validate(cfg)


def config_dict(cfg: ExperimentConfig) -> Dict[str, Any]:
    return canonical(asdict(cfg))


def config_hash(cfg: ExperimentConfig) -> str:
    """First 16 hex digits of the SHA-256 of the canonical JSON form, output directory excluded."""
    data = config_dict(cfg)
    data["run"].pop("output", None)
    text = jsonpickle.encode(canonical(data), unpicklable=False)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    variant: str
    dataset: str
    output_dir: str
    started: str
    finished: Optional[str] = None
    status: str = "running"
    wall_time: Optional[float] = None
    artifacts: Dict[str, str] = field(default_factory=dict)
    """Artifact kind to file name, relative to `output_dir`."""

    def to_json(self) -> str:
        return jsonpickle.encode(self, unpicklable=False, indent=2)

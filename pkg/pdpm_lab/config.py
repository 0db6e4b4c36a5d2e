"""
Experiment Configuration Loader
===============================

Parses experiment YAML (or JSON) files into dataclasses and echoes the fully
resolved configuration into every run directory.

Usage:
    from pdpm_lab.config import load_config

    config = load_config('configs/grid25.yaml')
    print(config.train.lam, config.dataset.mixture().n_modes)
"""

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from .errors import ConfigError, ContractError
from .metrics import MetricSettings
from .synthetic_data import GRID_HALFWIDTH, MIXTURE_NAMES, RING_RADIUS, MixtureSpec, mixture_from_name
from .training import ModelConfig, TrainConfig


@dataclass
class MixtureConfig:
    """Real distribution: ring8 / grid25 with optional geometry overrides, or custom centers."""
    name: str = "grid25"
    radius: float = RING_RADIUS       # ring8 only
    halfwidth: float = GRID_HALFWIDTH  # grid25 only
    std: Optional[float] = None       # None: the mixture's default
    centers: Optional[list[list[float]]] = None  # custom only

    def mixture(self) -> MixtureSpec:
        if self.name == "custom":
            return MixtureSpec(centers=self.centers, std=self.std, name="custom")
        return mixture_from_name(self.name, radius=self.radius, halfwidth=self.halfwidth, std=self.std)

    def problems(self, prefix: str = "dataset") -> list[tuple[str, str]]:
        found = []
        if self.name not in MIXTURE_NAMES:
            found.append((f"{prefix}.name", f"must be one of {MIXTURE_NAMES}"))
        if self.std is not None and not (isinstance(self.std, (int, float)) and self.std > 0
                                         and math.isfinite(self.std)):
            found.append((f"{prefix}.std", "must be finite and > 0"))
        if self.name == "custom":
            if not self.centers:
                found.append((f"{prefix}.centers", "required for a custom mixture"))
            elif any(not isinstance(c, (list, tuple)) or len(c) != 2 for c in self.centers):
                found.append((f"{prefix}.centers", "each center must be an [x, y] pair"))
            if self.std is None:
                found.append((f"{prefix}.std", "required for a custom mixture"))
        if not self.radius > 0:
            found.append((f"{prefix}.radius", "must be > 0"))
        if not self.halfwidth > 0:
            found.append((f"{prefix}.halfwidth", "must be > 0"))
        return found


@dataclass
class PlotConfig:
    """Which SVG figures `plot` (and `train --plot`) emits."""
    scatter: bool = True
    losses: bool = True
    interpolation: bool = False
    n_samples: int = 2000


@dataclass
class ExperimentConfig:
    """Complete experiment: data, training, evaluation, comparison grid and outputs."""
    dataset: MixtureConfig = field(default_factory=MixtureConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    metrics: MetricSettings = field(default_factory=MetricSettings)
    n_seeds: int = 5
    seeds: Optional[list[int]] = None          # explicit list overrides n_seeds
    lambdas: list[float] = field(default_factory=lambda: [0.0, 1.0])
    scales: list[float] = field(default_factory=lambda: [1.0])
    include_ms: bool = False
    workers: int = 1
    output_dir: str = "out"
    plots: PlotConfig = field(default_factory=PlotConfig)

    def seed_list(self) -> list[int]:
        if self.seeds is not None:
            return list(self.seeds)
        return [self.train.seed + i for i in range(self.n_seeds)]

    def problems(self) -> list[tuple[str, str]]:
        found = self.dataset.problems() + self.train.problems() + self.metrics.problems()
        if self.seeds is None and self.n_seeds < 1:
            found.append(("n_seeds", "must be >= 1"))
        if self.seeds is not None and len(set(self.seeds)) != len(self.seeds):
            found.append(("seeds", "must not repeat"))
        if not self.lambdas:
            found.append(("lambdas", "must not be empty"))
        if any(not (v >= 0 and math.isfinite(v)) for v in self.lambdas):
            found.append(("lambdas", "every lambda must be finite and >= 0"))
        if not self.scales or any(not math.isfinite(v) for v in self.scales):
            found.append(("scales", "must be a non-empty list of finite values"))
        if self.workers < 1:
            found.append(("workers", "must be >= 1"))
        if self.plots.n_samples < 0:
            found.append(("plots.n_samples", "must be >= 0"))
        return found

    def validate(self) -> "ExperimentConfig":
        found = self.problems()
        if found:
            raise ConfigError(found)
        self.train = self.train.resolved()
        return self

    def to_dict(self) -> dict:
        data = asdict(self)
        data["train"] = self.train.to_dict()
        data["seeds"] = self.seed_list()
        return data


# ============================================================
# PARSING
# ============================================================

def _parse_section(cls, data: Any, prefix: str, errors: list[tuple[str, str]],
                   nested: Optional[dict] = None):
    """
    Build dataclass `cls` from a mapping: data.get(name, default) per field,
    unknown keys and uncoercible values recorded in `errors`.
    """
    if data is None:
        data = {}
    if not isinstance(data, dict):
        errors.append((prefix, "must be a mapping"))
        return cls()
    nested = nested or {}
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            errors.append((f"{prefix}.{key}", "unknown field"))

    defaults = cls()
    values = {}
    for name in known:
        if name in nested:
            values[name] = _parse_section(nested[name], data.get(name), f"{prefix}.{name}", errors)
            continue
        value = data.get(name, getattr(defaults, name))
        values[name] = _coerce(value, getattr(defaults, name), f"{prefix}.{name}", errors)
    return cls(**values)


def _coerce(value: Any, default: Any, name: str, errors: list[tuple[str, str]]) -> Any:
    """Match the default's type (int / float / bool / str); lists and None pass through."""
    if value is None or default is None or isinstance(default, list):
        return value
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(default, str):
            if not isinstance(value, str):
                raise TypeError
            return value
    except (TypeError, ValueError):
        errors.append((name, f"expected {type(default).__name__}, got {value!r}"))
        return default
    return value


def _parse_float_list(value: Any, name: str, errors: list[tuple[str, str]]) -> list[float]:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return [float(value)]
    if not isinstance(value, (list, tuple)):
        errors.append((name, "expected a list of numbers"))
        return []
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError):
        errors.append((name, "expected a list of numbers"))
        return []


def parse_config(data: Optional[dict]) -> ExperimentConfig:
    """Mapping (from YAML/JSON) -> validated ExperimentConfig. Missing fields take defaults."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError([("<root>", "configuration must be a mapping")])

    errors: list[tuple[str, str]] = []
    top = {f.name for f in fields(ExperimentConfig)}
    for key in data:
        if key not in top:
            errors.append((key, "unknown field"))

    train_data = data.get("train", {}) or {}
    train = _parse_section(TrainConfig, train_data, "train", errors, nested={"model": ModelConfig})
    if isinstance(train_data, dict) and train_data.get("k") is not None:
        train.k = _coerce(train_data["k"], 1, "train.k", errors)

    defaults = ExperimentConfig()
    config = ExperimentConfig(
        dataset=_parse_section(MixtureConfig, data.get("dataset"), "dataset", errors),
        train=train,
        metrics=_parse_section(MetricSettings, data.get("metrics"), "metrics", errors),
        n_seeds=_coerce(data.get("n_seeds", defaults.n_seeds), 1, "n_seeds", errors),
        seeds=None,
        lambdas=_parse_float_list(data.get("lambdas", defaults.lambdas), "lambdas", errors),
        scales=_parse_float_list(data.get("scales", defaults.scales), "scales", errors),
        include_ms=_coerce(data.get("include_ms", False), False, "include_ms", errors),
        workers=_coerce(data.get("workers", 1), 1, "workers", errors),
        output_dir=_coerce(data.get("output_dir", "out"), "out", "output_dir", errors),
        plots=_parse_section(PlotConfig, data.get("plots"), "plots", errors),
    )
    if data.get("seeds") is not None:
        seeds = data["seeds"]
        if isinstance(seeds, list) and all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
            config.seeds = list(seeds)
        else:
            errors.append(("seeds", "expected a list of integers"))

    if errors:
        raise ConfigError(errors)
    try:
        return config.validate()
    except ContractError as exc:
        raise ConfigError([("<root>", str(exc))]) from exc


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Load an experiment file (YAML or JSON) and return a validated ExperimentConfig.

    Raises:
        FileNotFoundError: path does not exist
        ConfigError: invalid content (every offending field listed)
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    with open(path, "r") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ConfigError([("<file>", f"cannot parse {path}: {exc}")]) from exc
    return parse_config(data)


def dump_config(config: ExperimentConfig, path: Union[str, Path]) -> Path:
    """Write the fully resolved configuration (sorted keys, indent 2)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config.to_dict(), sort_keys=True, indent=2) + "\n")
    return path

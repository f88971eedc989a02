"""Versioned JSON run configuration shared by the CLI subcommands.

    {"version": 1,
     "model": {...ModelConfig fields...},
     "data": {"n_train": 200, "n_test": 50, "n_valid": 25, "seed": 7, "sigma": 3.0},
     "metrics": {...MetricConfig fields...},
     "fdm": {"sigma": 11.0, "dims": [512, 320]}}

Every section is optional; missing keys take the defaults below.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from fixsearch.errors import ConfigError
from fixsearch.fdm import DEFAULT_SIGMA
from fixsearch.ingest import WORKING_DIMS
from fixsearch.metrics import MetricConfig
from fixsearch.model import ModelConfig

CONFIG_VERSION = 1


@dataclass
class DataConfig:
    n_train: int = 200
    n_test: int = 50
    n_valid: int = 25  # drawn from its own seed stream, used only for checkpoint selection
    seed: int = 7
    sigma: float = 3.0


@dataclass
class FdmConfig:
    sigma: float = DEFAULT_SIGMA
    dims: tuple = WORKING_DIMS  # (width, height)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    fdm: FdmConfig = field(default_factory=FdmConfig)
    version: int = CONFIG_VERSION

    def to_dict(self):
        fdm = asdict(self.fdm)
        fdm["dims"] = list(self.fdm.dims)
        return {
            "version": self.version,
            "model": self.model.to_dict(),
            "data": asdict(self.data),
            "metrics": asdict(self.metrics),
            "fdm": fdm,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _section(cls, d, name):
    if d is None:
        return cls()
    if not isinstance(d, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    unknown = set(d) - set(cls.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"bad {name!r} section: {exc}") from exc


def config_from_dict(d):
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    version = d.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version!r} (expected {CONFIG_VERSION})")
    unknown = set(d) - {"version", "model", "data", "metrics", "fdm"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return RunConfig(
        model=_section(ModelConfig, d.get("model"), "model"),
        data=_section(DataConfig, d.get("data"), "data"),
        metrics=_section(MetricConfig, d.get("metrics"), "metrics"),
        fdm=_section(FdmConfig, d.get("fdm"), "fdm"),
        version=version,
    )


def load_config(path=None):
    if path is None:
        return RunConfig()
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return config_from_dict(d)

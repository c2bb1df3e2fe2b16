"""Run configuration: every schedule, field, render, and loss default in one
place, loadable from a JSON file with command-line overrides layered on top.

Unknown keys are rejected; values are validated by the constructors of the
objects they configure.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field as dc_field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .fields import (DEFAULT_APP_CELLS, DEFAULT_APP_CHANNELS,
                     DEFAULT_GEO_CELLS, DEFAULT_GEO_CHANNELS, LevelSpec)
from .mapper import LossSettings, RenderSettings, Schedule


@dataclass
class FieldConfig:
    mode: str = "factorized"              # factorized | dense
    geo_cells: list[float] = dc_field(
        default_factory=lambda: [float(c) for c in DEFAULT_GEO_CELLS])
    geo_channels: int = DEFAULT_GEO_CHANNELS
    app_cells: list[float] = dc_field(
        default_factory=lambda: [float(c) for c in DEFAULT_APP_CELLS])
    app_channels: int = DEFAULT_APP_CHANNELS
    app_coords: bool = True
    init_scale: float = 0.01

    def geo_specs(self) -> list[LevelSpec]:
        return [LevelSpec(c, self.geo_channels) for c in self.geo_cells]

    def app_specs(self) -> list[LevelSpec]:
        return [LevelSpec(c, self.app_channels) for c in self.app_cells]


@dataclass
class OptimConfig:
    lr_grid: float = 0.01
    lr_mlp: float = 1e-5
    lr_beta: float = 1e-3
    beta_init: float = 10.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8


@dataclass
class EvalConfig:
    eval_every: int = 1          # compute log metrics every k-th update
    eval_stride: int = 2         # subsampling for per-update log metrics
    final_eval_frames: int = 10  # views evaluated by cmd_eval / end of cmd_map
    mesh_cell: float = 0.02
    mesh_samples: int = 100_000
    checkpoint_every: int = 5    # save every U updates


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1
    field: FieldConfig = dc_field(default_factory=FieldConfig)
    optim: OptimConfig = dc_field(default_factory=OptimConfig)
    schedule: Schedule = dc_field(default_factory=Schedule)
    render: RenderSettings = dc_field(default_factory=RenderSettings)
    loss: LossSettings = dc_field(default_factory=LossSettings)
    eval: EvalConfig = dc_field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = ("field", "optim", "schedule", "render", "loss", "eval")
_SECTION_TYPES = {
    "field": FieldConfig,
    "optim": OptimConfig,
    "schedule": Schedule,
    "render": RenderSettings,
    "loss": LossSettings,
    "eval": EvalConfig,
}


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    cfg = RunConfig()
    for key, value in data.items():
        if key in ("seed", "threads"):
            if not isinstance(value, int):
                raise ConfigError(f"config key {key!r} must be an integer")
            setattr(cfg, key, value)
        elif key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            cls = _SECTION_TYPES[key]
            known = {f.name for f in fields(cls)}
            unknown = set(value) - known
            if unknown:
                raise ConfigError(
                    f"unknown key(s) in config section {key!r}: {sorted(unknown)}")
            base = asdict(getattr(cfg, key))
            base.update(value)
            try:
                setattr(cfg, key, cls(**base))
            except (ValueError, TypeError) as e:
                raise ConfigError(f"invalid value in section {key!r}: {e}") from e
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    return config_from_dict(data)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def build_model_from_config(cfg: RunConfig, bounds):
    from .model import build_scene_model
    return build_scene_model(
        bounds,
        geo_specs=cfg.field.geo_specs(),
        app_specs=cfg.field.app_specs(),
        field_mode=cfg.field.mode,
        app_coords=cfg.field.app_coords,
        init_scale=cfg.field.init_scale,
        beta_init=cfg.optim.beta_init,
        lr_grid=cfg.optim.lr_grid,
        lr_mlp=cfg.optim.lr_mlp,
        lr_beta=cfg.optim.lr_beta,
        rng=np.random.default_rng(cfg.seed))

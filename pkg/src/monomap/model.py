"""Bundle of everything trainable: feature field, both decoders, the density
sharpness parameter, and the ParamStore that owns them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autodiff as ad
from .autodiff import Param, ParamStore, Tape, Var
from .decoders import Mlp, build_app_decoder, build_geo_decoder, decode_app, \
    decode_app_nocoord, decode_geo
from .fields import FeatureField, LevelSpec, SceneBounds, build_dense_field, \
    build_field, default_app_specs, default_geo_specs, dense_cell_for_budget, \
    register_default_groups

DEFAULT_BETA_INIT = 10.0


@dataclass
class SceneModel:
    store: ParamStore
    field: FeatureField
    geo_mlp: Mlp
    app_mlp: Mlp
    beta_log: Param
    app_coords: bool = True
    field_mode: str = "factorized"
    geo_specs: list[LevelSpec] = dc_field(default_factory=list)
    app_specs: list[LevelSpec] = dc_field(default_factory=list)
    init_scale: float = 0.01

    @property
    def bounds(self) -> SceneBounds:
        return self.field.bounds

    def beta(self, tape: Tape) -> Var:
        """Density sharpness; stored as a log so it stays positive."""
        return ad.exp(tape.leaf(self.beta_log))

    def beta_value(self) -> float:
        return float(math.exp(self.beta_log.value[()]))

    def decode(self, tape: Tape, positions: np.ndarray) -> tuple[Var, Var]:
        """Raw geometry output (M,) and color (M, 3) at world positions."""
        f_geo = self.field.query_geo(tape, positions)
        raw_geo = decode_geo(tape, self.geo_mlp, f_geo)
        f_app = self.field.query_app(tape, positions)
        if self.app_coords:
            p_norm = self.bounds.normalize(positions)
            color = decode_app(tape, self.app_mlp, p_norm, f_app)
        else:
            color = decode_app_nocoord(tape, self.app_mlp, f_app)
        return raw_geo, color

    def sdf_at(self, positions: np.ndarray) -> np.ndarray:
        """Forward-only signed distance; convenience for meshing."""
        tape = Tape()
        f_geo = self.field.query_geo(tape, positions)
        out = decode_geo(tape, self.geo_mlp, f_geo).value
        tape.release()
        return out

    def color_at(self, positions: np.ndarray) -> np.ndarray:
        tape = Tape()
        f_app = self.field.query_app(tape, positions)
        if self.app_coords:
            color = decode_app(tape, self.app_mlp,
                               self.bounds.normalize(positions), f_app)
        else:
            color = decode_app_nocoord(tape, self.app_mlp, f_app)
        out = color.value
        tape.release()
        return out


def matched_dense_specs(bounds: SceneBounds,
                        geo_specs: list[LevelSpec],
                        app_specs: list[LevelSpec]) -> tuple[LevelSpec, LevelSpec]:
    """Single-level dense specs whose parameter counts match the factorized
    stacks at equal feature dimensionality."""
    from .fields import FactorizedLevel, axis_resolution  # count arithmetic only

    def stack_params(specs):
        total = 0
        for s in specs:
            res = [axis_resolution(e, s.cell_size) for e in bounds.extent]
            nx, ny, nz = res
            total += s.channels * (nx + ny + nz + ny * nz + nx * nz + nx * ny)
        return total

    geo_dim = sum(s.channels for s in geo_specs)
    app_dim = sum(s.channels for s in app_specs)
    geo_cell = dense_cell_for_budget(bounds, geo_dim, stack_params(geo_specs))
    app_cell = dense_cell_for_budget(bounds, app_dim, stack_params(app_specs))
    return LevelSpec(geo_cell, geo_dim), LevelSpec(app_cell, app_dim)


def build_scene_model(bounds: SceneBounds,
                      geo_specs: list[LevelSpec] | None = None,
                      app_specs: list[LevelSpec] | None = None,
                      field_mode: str = "factorized",
                      app_coords: bool = True,
                      init_scale: float = 0.01,
                      beta_init: float = DEFAULT_BETA_INIT,
                      lr_grid: float = 0.01,
                      lr_mlp: float = 1e-5,
                      lr_beta: float = 1e-3,
                      rng: np.random.Generator | None = None) -> SceneModel:
    if field_mode not in ("factorized", "dense"):
        raise ValueError(f"unknown field mode {field_mode!r}")
    geo_specs = default_geo_specs() if geo_specs is None else list(geo_specs)
    app_specs = default_app_specs() if app_specs is None else list(app_specs)
    rng = np.random.default_rng(0) if rng is None else rng
    store = ParamStore()
    register_default_groups(store, lr_grid=lr_grid, lr_mlp=lr_mlp, lr_beta=lr_beta)
    if field_mode == "factorized":
        field = build_field(store, bounds, geo_specs, app_specs, init_scale, rng)
    else:
        geo_spec, app_spec = matched_dense_specs(bounds, geo_specs, app_specs)
        field = build_dense_field(store, bounds, geo_spec, app_spec, init_scale, rng)
    coarsest = max(s.cell_size for s in geo_specs)
    geo_mlp = build_geo_decoder(store, field.geo_dim, rng, coarsest_cell=coarsest)
    app_mlp = build_app_decoder(store, field.app_dim, rng, with_coords=app_coords)
    beta_log = store.add_param("beta_log", np.array(math.log(beta_init)), "beta")
    return SceneModel(store=store, field=field, geo_mlp=geo_mlp, app_mlp=app_mlp,
                      beta_log=beta_log, app_coords=app_coords,
                      field_mode=field_mode, geo_specs=geo_specs,
                      app_specs=app_specs, init_scale=init_scale)

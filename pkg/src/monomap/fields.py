"""Scene representation: multi-resolution factorized feature grids.

Each resolution level stores three axis line vectors and three plane matrices;
a query combines linear interpolation on the lines with bilinear interpolation
on the planes and sums the three axis components per channel. A dense trilinear
grid with the same query signature backs the factorization ablation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tape, Var

GEO_GROUP = "grid_geo"
APP_GROUP = "grid_app"

# coarse -> fine cell sizes in meters
DEFAULT_GEO_CELLS = tuple(np.linspace(0.64, 0.02, 6).round(6))
DEFAULT_GEO_CHANNELS = 2
DEFAULT_APP_CELLS = (0.24, 0.02)
DEFAULT_APP_CHANNELS = 32
DEFAULT_INIT_SCALE = 1e-2

# dense-grid allocations above this estimate are refused (value + grad bytes)
DENSE_MEMORY_CAP_BYTES = 2 << 30


class SceneBounds:
    """Axis-aligned scene box; normalization maps it onto [-1, 1]^3."""

    __slots__ = ("min_corner", "max_corner")

    def __init__(self, min_corner, max_corner) -> None:
        self.min_corner = np.asarray(min_corner, dtype=np.float64).reshape(3)
        self.max_corner = np.asarray(max_corner, dtype=np.float64).reshape(3)
        if not np.all(self.max_corner > self.min_corner):
            raise ValueError(
                f"degenerate scene bounds: min {self.min_corner} max {self.max_corner}")

    @property
    def extent(self) -> np.ndarray:
        return self.max_corner - self.min_corner

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min_corner + self.max_corner)

    def normalize(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return 2.0 * (p - self.min_corner) / self.extent - 1.0

    def denormalize(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        return (q + 1.0) * 0.5 * self.extent + self.min_corner

    def contains(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return np.all((p >= self.min_corner) & (p <= self.max_corner), axis=-1)

    def __repr__(self) -> str:
        return f"SceneBounds({self.min_corner.tolist()}, {self.max_corner.tolist()})"


@dataclass(frozen=True)
class LevelSpec:
    cell_size: float
    channels: int

    def __post_init__(self):
        if self.cell_size <= 0.0:
            raise ValueError("cell_size must be positive")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")


def default_geo_specs() -> list[LevelSpec]:
    return [LevelSpec(c, DEFAULT_GEO_CHANNELS) for c in DEFAULT_GEO_CELLS]


def default_app_specs() -> list[LevelSpec]:
    return [LevelSpec(c, DEFAULT_APP_CHANNELS) for c in DEFAULT_APP_CELLS]


def axis_resolution(extent: float, cell_size: float) -> int:
    """Vertex count along one axis: ceil(extent / cell) with a floor of 2."""
    return max(2, int(math.ceil(extent / cell_size - 1e-9)))


def _grid_coords(p: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Map normalized coords in [-1, 1] to (lower vertex index, fraction)."""
    u = (np.clip(p, -1.0, 1.0) + 1.0) * 0.5 * (n - 1)
    i0 = np.clip(np.floor(u).astype(np.int64), 0, n - 2)
    return i0, u - i0


class FactorizedLevel:
    """One resolution level of the vector-matrix factorized grid.

    Per channel c the queried feature is
        v_c^x(x) * M_c^yz(y, z) + v_c^y(y) * M_c^xz(x, z) + v_c^z(z) * M_c^xy(x, y)
    with linear interpolation on the line vectors and bilinear interpolation on
    the plane matrices.
    """

    def __init__(self, store: ParamStore, name: str, group: str,
                 bounds: SceneBounds, cell_size: float, channels: int,
                 init_scale: float, rng: np.random.Generator) -> None:
        ex, ey, ez = bounds.extent
        nx = axis_resolution(ex, cell_size)
        ny = axis_resolution(ey, cell_size)
        nz = axis_resolution(ez, cell_size)
        self.cell_size = float(cell_size)
        self.channels = int(channels)
        self.resolution = (nx, ny, nz)

        def init(shape):
            return rng.uniform(-init_scale, init_scale, size=shape)

        c = channels
        self.line_x = store.add_param(f"{name}/line_x", init((nx, c)), group)
        self.line_y = store.add_param(f"{name}/line_y", init((ny, c)), group)
        self.line_z = store.add_param(f"{name}/line_z", init((nz, c)), group)
        self.plane_yz = store.add_param(f"{name}/plane_yz", init((ny, nz, c)), group)
        self.plane_xz = store.add_param(f"{name}/plane_xz", init((nx, nz, c)), group)
        self.plane_xy = store.add_param(f"{name}/plane_xy", init((nx, ny, c)), group)

    def params(self):
        return [self.line_x, self.line_y, self.line_z,
                self.plane_yz, self.plane_xz, self.plane_xy]

    @property
    def param_count(self) -> int:
        nx, ny, nz = self.resolution
        return self.channels * (nx + ny + nz + ny * nz + nx * nz + nx * ny)

    def query(self, tape: Tape, p_norm: np.ndarray) -> Var:
        """Feature vector (M, channels) at normalized positions (M, 3)."""
        ix, fx = _grid_coords(p_norm[:, 0], self.resolution[0])
        iy, fy = _grid_coords(p_norm[:, 1], self.resolution[1])
        iz, fz = _grid_coords(p_norm[:, 2], self.resolution[2])
        lx = _line_interp(tape, self.line_x, ix, fx)
        ly = _line_interp(tape, self.line_y, iy, fy)
        lz = _line_interp(tape, self.line_z, iz, fz)
        pyz = _plane_interp(tape, self.plane_yz, iy, fy, iz, fz)
        pxz = _plane_interp(tape, self.plane_xz, ix, fx, iz, fz)
        pxy = _plane_interp(tape, self.plane_xy, ix, fx, iy, fy)
        return lx * pyz + ly * pxz + lz * pxy


def _line_interp(tape: Tape, param, i0, frac) -> Var:
    idx = np.stack([i0, i0 + 1], axis=1)
    w = np.stack([1.0 - frac, frac], axis=1)
    return ad.weighted_gather(tape.leaf(param), idx, w)


def _plane_interp(tape: Tape, param, ia0, fa, ib0, fb) -> Var:
    na, nb, c = param.value.shape
    flat = ad.reshape(tape.leaf(param), (na * nb, c))
    base = ia0 * nb + ib0
    idx = np.stack([base, base + 1, base + nb, base + nb + 1], axis=1)
    w = np.stack([(1.0 - fa) * (1.0 - fb), (1.0 - fa) * fb,
                  fa * (1.0 - fb), fa * fb], axis=1)
    return ad.weighted_gather(flat, idx, w)


class DenseGrid:
    """Per-voxel feature grid with trilinear queries; ablation baseline."""

    def __init__(self, store: ParamStore, name: str, group: str,
                 bounds: SceneBounds, cell_size: float, channels: int,
                 init_scale: float, rng: np.random.Generator,
                 memory_cap_bytes: int = DENSE_MEMORY_CAP_BYTES) -> None:
        ex, ey, ez = bounds.extent
        nx = axis_resolution(ex, cell_size)
        ny = axis_resolution(ey, cell_size)
        nz = axis_resolution(ez, cell_size)
        estimate = nx * ny * nz * channels * 8 * 2  # value + grad buffers
        if estimate > memory_cap_bytes:
            raise ValueError(
                f"dense grid ({nx}x{ny}x{nz}x{channels}) would need "
                f"{estimate / 2**20:.0f} MiB > cap {memory_cap_bytes / 2**20:.0f} MiB")
        self.cell_size = float(cell_size)
        self.channels = int(channels)
        self.resolution = (nx, ny, nz)
        self.values = store.add_param(
            f"{name}/dense", rng.uniform(-init_scale, init_scale, (nx, ny, nz, channels)),
            group)

    def params(self):
        return [self.values]

    @property
    def param_count(self) -> int:
        nx, ny, nz = self.resolution
        return self.channels * nx * ny * nz

    def query(self, tape: Tape, p_norm: np.ndarray) -> Var:
        nx, ny, nz = self.resolution
        ix, fx = _grid_coords(p_norm[:, 0], nx)
        iy, fy = _grid_coords(p_norm[:, 1], ny)
        iz, fz = _grid_coords(p_norm[:, 2], nz)
        flat = ad.reshape(tape.leaf(self.values), (nx * ny * nz, self.channels))
        base = (ix * ny + iy) * nz + iz
        corners, weights = [], []
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            for dy, wy in ((0, 1.0 - fy), (1, fy)):
                for dz, wz in ((0, 1.0 - fz), (1, fz)):
                    corners.append(base + (dx * ny + dy) * nz + dz)
                    weights.append(wx * wy * wz)
        return ad.weighted_gather(flat, np.stack(corners, axis=1),
                                  np.stack(weights, axis=1))


class FeatureField:
    """Geometry and appearance level stacks over one shared bounds object."""

    def __init__(self, bounds: SceneBounds, geo_levels, app_levels) -> None:
        self.bounds = bounds
        self.geo_levels = list(geo_levels)
        self.app_levels = list(app_levels)

    @property
    def geo_dim(self) -> int:
        return sum(level.channels for level in self.geo_levels)

    @property
    def app_dim(self) -> int:
        return sum(level.channels for level in self.app_levels)

    @property
    def param_count(self) -> int:
        return sum(level.param_count for level in self.geo_levels + self.app_levels)

    def query_geo(self, tape: Tape, p_world: np.ndarray) -> Var:
        """Concatenated geometry features, level order coarse -> fine."""
        p_norm = self.bounds.normalize(p_world)
        feats = [level.query(tape, p_norm) for level in self.geo_levels]
        return feats[0] if len(feats) == 1 else ad.concat(feats, axis=1)

    def query_app(self, tape: Tape, p_world: np.ndarray) -> Var:
        p_norm = self.bounds.normalize(p_world)
        feats = [level.query(tape, p_norm) for level in self.app_levels]
        return feats[0] if len(feats) == 1 else ad.concat(feats, axis=1)


def build_field(store: ParamStore, bounds: SceneBounds,
                geo_specs: list[LevelSpec] | None = None,
                app_specs: list[LevelSpec] | None = None,
                init_scale: float = DEFAULT_INIT_SCALE,
                rng: np.random.Generator | None = None) -> FeatureField:
    """Factorized field with factors initialized i.i.d. uniform in +-init_scale."""
    geo_specs = default_geo_specs() if geo_specs is None else geo_specs
    app_specs = default_app_specs() if app_specs is None else app_specs
    rng = np.random.default_rng(0) if rng is None else rng
    geo = [FactorizedLevel(store, f"geo/level{i}", GEO_GROUP, bounds,
                           s.cell_size, s.channels, init_scale, rng)
           for i, s in enumerate(geo_specs)]
    app = [FactorizedLevel(store, f"app/level{i}", APP_GROUP, bounds,
                           s.cell_size, s.channels, init_scale, rng)
           for i, s in enumerate(app_specs)]
    return FeatureField(bounds, geo, app)


def build_dense_field(store: ParamStore, bounds: SceneBounds,
                      geo_spec: LevelSpec, app_spec: LevelSpec,
                      init_scale: float = DEFAULT_INIT_SCALE,
                      rng: np.random.Generator | None = None,
                      memory_cap_bytes: int = DENSE_MEMORY_CAP_BYTES) -> FeatureField:
    """Dense-grid variant: one trilinear grid per path, same query surface."""
    rng = np.random.default_rng(0) if rng is None else rng
    geo = DenseGrid(store, "geo", GEO_GROUP, bounds, geo_spec.cell_size,
                    geo_spec.channels, init_scale, rng, memory_cap_bytes)
    app = DenseGrid(store, "app", APP_GROUP, bounds, app_spec.cell_size,
                    app_spec.channels, init_scale, rng, memory_cap_bytes)
    return FeatureField(bounds, [geo], [app])


def dense_cell_for_budget(bounds: SceneBounds, channels: int,
                          param_budget: int) -> float:
    """Smallest cell size whose dense grid stays within a parameter budget.

    Used to build the matched-budget dense baseline for the factorization
    comparison.
    """
    def count(cell: float) -> int:
        return channels * int(np.prod([axis_resolution(e, cell) for e in bounds.extent]))

    coarse = float(max(bounds.extent))
    if count(coarse) > param_budget:
        return coarse
    fine = coarse / 4096.0
    for _ in range(64):
        mid = 0.5 * (fine + coarse)
        if count(mid) <= param_budget:
            coarse = mid
        else:
            fine = mid
    return coarse


def register_default_groups(store: ParamStore, lr_grid: float = 0.01,
                            lr_mlp: float = 1e-5, lr_beta: float = 1e-3) -> None:
    """Standard five parameter groups with their learning rates."""
    store.add_group(GEO_GROUP, lr_grid)
    store.add_group(APP_GROUP, lr_grid)
    store.add_group("mlp_geo", lr_mlp)
    store.add_group("mlp_app", lr_mlp)
    store.add_group("beta", lr_beta)

"""Tests for the factorized / dense feature grids, with independently coded
brute-force interpolation oracles."""

import numpy as np
import pytest

from monomap import autodiff as ad
from monomap.autodiff import ParamStore, Tape
from monomap.fields import (DenseGrid, FactorizedLevel, FeatureField, LevelSpec,
                            SceneBounds, axis_resolution, build_dense_field,
                            build_field, default_app_specs, default_geo_specs,
                            dense_cell_for_budget)


def make_store():
    store = ParamStore()
    store.add_group("grid_geo", 0.01)
    store.add_group("grid_app", 0.01)
    return store


def unit_bounds():
    return SceneBounds([0.0, 0.0, 0.0], [1.0, 1.0, 1.0])


def make_level(cell=0.25, channels=1, seed=0, bounds=None):
    store = make_store()
    rng = np.random.default_rng(seed)
    level = FactorizedLevel(store, "geo/level0", "grid_geo",
                            bounds or unit_bounds(), cell, channels, 0.5, rng)
    return store, level


# ---------------------------------------------------------------- oracles

def lerp_line(vec, x):
    """Brute-force LiLerp on a line vector; x in [-1, 1]."""
    n = vec.shape[0]
    u = (min(max(x, -1.0), 1.0) + 1.0) / 2.0 * (n - 1)
    i0 = min(int(np.floor(u)), n - 2)
    f = u - i0
    return vec[i0] * (1.0 - f) + vec[i0 + 1] * f


def lerp_plane(mat, a, b):
    """Brute-force BiLerp on a plane matrix; a, b in [-1, 1]."""
    na, nb = mat.shape[0], mat.shape[1]
    ua = (min(max(a, -1.0), 1.0) + 1.0) / 2.0 * (na - 1)
    ub = (min(max(b, -1.0), 1.0) + 1.0) / 2.0 * (nb - 1)
    ia = min(int(np.floor(ua)), na - 2)
    ib = min(int(np.floor(ub)), nb - 2)
    fa, fb = ua - ia, ub - ib
    return (mat[ia, ib] * (1 - fa) * (1 - fb) + mat[ia, ib + 1] * (1 - fa) * fb
            + mat[ia + 1, ib] * fa * (1 - fb) + mat[ia + 1, ib + 1] * fa * fb)


def factorized_oracle(level, p):
    x, y, z = p
    return (lerp_line(level.line_x.value, x) * lerp_plane(level.plane_yz.value, y, z)
            + lerp_line(level.line_y.value, y) * lerp_plane(level.plane_xz.value, x, z)
            + lerp_line(level.line_z.value, z) * lerp_plane(level.plane_xy.value, x, y))


def trilinear_oracle(values, p):
    """Brute-force trilinear interpolation over a dense (nx,ny,nz,c) grid."""
    nx, ny, nz = values.shape[:3]
    coords = []
    for v, n in zip(p, (nx, ny, nz)):
        u = (min(max(v, -1.0), 1.0) + 1.0) / 2.0 * (n - 1)
        i0 = min(int(np.floor(u)), n - 2)
        coords.append((i0, u - i0))
    (ix, fx), (iy, fy), (iz, fz) = coords
    out = np.zeros(values.shape[3])
    for dx, wx in ((0, 1 - fx), (1, fx)):
        for dy, wy in ((0, 1 - fy), (1, fy)):
            for dz, wz in ((0, 1 - fz), (1, fz)):
                out += values[ix + dx, iy + dy, iz + dz] * wx * wy * wz
    return out


# ---------------------------------------------------------------- bounds

class TestSceneBounds:
    def test_normalize_roundtrip(self):
        b = SceneBounds([-1.0, 0.0, 2.0], [3.0, 2.0, 5.0])
        rng = np.random.default_rng(0)
        p = rng.uniform(-2, 6, (50, 3))
        np.testing.assert_allclose(b.denormalize(b.normalize(p)), p, atol=1e-12)

    def test_normalize_maps_box_to_unit_cube(self):
        b = SceneBounds([0.0, 0.0, 0.0], [2.0, 4.0, 8.0])
        np.testing.assert_allclose(b.normalize(b.min_corner), [-1, -1, -1])
        np.testing.assert_allclose(b.normalize(b.max_corner), [1, 1, 1])

    def test_degenerate_bounds_rejected(self):
        with pytest.raises(ValueError, match="degenerate"):
            SceneBounds([0, 0, 0], [1, 0, 1])


# ---------------------------------------------------------------- build

class TestBuild:
    def test_resolution_from_cell_size(self):
        store = make_store()
        rng = np.random.default_rng(0)
        level = FactorizedLevel(store, "geo/l", "grid_geo", unit_bounds(),
                                0.25, 1, 0.01, rng)
        assert level.resolution == (4, 4, 4)

    def test_default_geo_spec(self):
        specs = default_geo_specs()
        assert len(specs) == 6
        cells_cm = sorted(round(s.cell_size * 100, 4) for s in specs)
        assert cells_cm == [2.0, 14.4, 26.8, 39.2, 51.6, 64.0]
        assert all(s.channels == 2 for s in specs)

    def test_default_app_spec(self):
        specs = default_app_specs()
        assert [s.cell_size for s in specs] == [0.24, 0.02]
        assert all(s.channels == 32 for s in specs)

    def test_factors_registered_in_grid_groups(self):
        store = make_store()
        field = build_field(store, unit_bounds(),
                            geo_specs=[LevelSpec(0.25, 2)],
                            app_specs=[LevelSpec(0.25, 4)],
                            rng=np.random.default_rng(0))
        assert all(p.group == "grid_geo" for lv in field.geo_levels for p in lv.params())
        assert all(p.group == "grid_app" for lv in field.app_levels for p in lv.params())

    def test_init_scale_bounds_factor_values(self):
        store, level = make_level(seed=3)
        for p in level.params():
            assert np.all(np.abs(p.value) <= 0.5)

    def test_param_count_invariant(self):
        store, level = make_level(cell=0.2, channels=3)
        nx, ny, nz = level.resolution
        expected = 3 * (nx + ny + nz + ny * nz + nx * nz + nx * ny)
        assert level.param_count == expected
        assert level.param_count < 3 * nx * ny * nz

    def test_memory_claim_at_2cm(self):
        # 1 m^3 at 2 cm: factorized < 7% of dense at equal channels
        n = axis_resolution(1.0, 0.02)
        assert n == 50
        factorized = 3 * n + 3 * n * n
        dense = n ** 3
        assert factorized / dense < 0.07


# ---------------------------------------------------------------- queries

class TestFactorizedQuery:
    def test_zero_factors_give_zero(self):
        store, level = make_level()
        for p in level.params():
            p.value[...] = 0.0
        tape = Tape()
        out = level.query(tape, np.random.default_rng(1).uniform(-1, 1, (20, 3)))
        np.testing.assert_array_equal(out.value, 0.0)

    def test_single_constant_component(self):
        store, level = make_level()
        for p in level.params():
            p.value[...] = 0.0
        level.line_z.value[...] = 1.0
        level.plane_xy.value[...] = 1.0
        tape = Tape()
        out = level.query(tape, np.random.default_rng(2).uniform(-1, 1, (32, 3)))
        np.testing.assert_allclose(out.value, 1.0, atol=1e-15)

    def test_matches_brute_force_oracle(self):
        store, level = make_level(cell=0.25, channels=1, seed=7)
        rng = np.random.default_rng(8)
        pts = rng.uniform(-1.2, 1.2, (1000, 3))  # includes out-of-bounds clamping
        tape = Tape()
        got = level.query(tape, pts).value
        for i in range(pts.shape[0]):
            expected = factorized_oracle(level, pts[i])
            assert abs(got[i, 0] - expected[0]) <= 1e-12

    def test_separable_field_is_exact(self):
        # factors sampled from g(x,y,z) = a(x) * b(y,z); query reproduces the
        # product of the interpolated factors exactly
        store, level = make_level(cell=0.25, channels=1, seed=9)
        rng = np.random.default_rng(10)
        for p in level.params():
            p.value[...] = 0.0
        a = rng.standard_normal(level.line_x.value.shape)
        b = rng.standard_normal(level.plane_yz.value.shape)
        level.line_x.value[...] = a
        level.plane_yz.value[...] = b
        pts = rng.uniform(-1, 1, (200, 3))
        tape = Tape()
        got = level.query(tape, pts).value
        for i, p in enumerate(pts):
            expected = lerp_line(a, p[0]) * lerp_plane(b, p[1], p[2])
            assert got[i, 0] == pytest.approx(expected[0], abs=1e-15)

    def test_continuity_across_cell_boundaries(self):
        store, level = make_level(cell=0.25, channels=2, seed=11)
        # straddle an interior vertex plane by +-1e-12
        n = level.resolution[0]
        boundary = -1.0 + 2.0 * 2 / (n - 1)  # vertex index 2 in normalized coords
        rng = np.random.default_rng(12)
        yz = rng.uniform(-1, 1, (50, 2))
        lo = np.column_stack([np.full(50, boundary - 1e-12), yz])
        hi = np.column_stack([np.full(50, boundary + 1e-12), yz])
        tape = Tape()
        d = np.abs(level.query(tape, lo).value - level.query(tape, hi).value)
        assert d.max() <= 1e-9

    def test_local_lipschitz_inside_cell(self):
        store, level = make_level(cell=0.25, channels=1, seed=13)
        rng = np.random.default_rng(14)
        base = rng.uniform(-0.9, 0.9, (100, 3))
        eps = 1e-6
        tape = Tape()
        f0 = level.query(tape, base).value
        f1 = level.query(tape, base + eps / np.sqrt(3)).value
        bound = sum(np.abs(p.value).max() for p in level.params())
        assert np.abs(f1 - f0).max() <= 50.0 * bound * eps

    def test_gradients_match_finite_differences(self):
        store, level = make_level(cell=0.34, channels=2, seed=15)
        rng = np.random.default_rng(16)
        pts = rng.uniform(-1, 1, (5, 3))
        coeff = rng.standard_normal((5, 2))

        def run():
            tape = Tape()
            return tape, ad.reduce_sum(level.query(tape, pts) * coeff)

        tape, out = run()
        store.zero_grad()
        tape.backward(out)
        for p in level.params():
            def loss_at(arr, _p=p):
                keep = _p.value.copy()
                _p.value[...] = arr
                _, o = run()
                _p.value[...] = keep
                return o.value
            fd = ad.finite_difference(loss_at, p.value)
            assert ad.relative_error(p.grad, fd) <= 1e-4, p.name


class TestFieldConcat:
    def test_single_level_shape(self):
        store = make_store()
        field = build_field(store, unit_bounds(), geo_specs=[LevelSpec(0.3, 2)],
                            app_specs=[LevelSpec(0.3, 32)],
                            rng=np.random.default_rng(0))
        tape = Tape()
        pts = np.random.default_rng(1).uniform(0, 1, (7, 3))
        assert field.query_geo(tape, pts).shape == (7, 2)
        assert field.query_app(tape, pts).shape == (7, 32)

    def test_default_dims(self):
        store = make_store()
        field = build_field(store, SceneBounds([0, 0, 0], [3.0, 3.0, 2.5]),
                            rng=np.random.default_rng(0))
        assert field.geo_dim == 12
        assert field.app_dim == 64
        tape = Tape()
        pts = np.zeros((2, 3)) + 0.7
        assert field.query_geo(tape, pts).shape == (2, 12)
        assert field.query_app(tape, pts).shape == (2, 64)

    def test_concat_equals_per_level_queries(self):
        store = make_store()
        field = build_field(store, unit_bounds(),
                            geo_specs=[LevelSpec(0.5, 2), LevelSpec(0.2, 2)],
                            app_specs=[LevelSpec(0.5, 4)],
                            rng=np.random.default_rng(3))
        pts = np.random.default_rng(4).uniform(0, 1, (9, 3))
        tape = Tape()
        combined = field.query_geo(tape, pts).value
        p_norm = field.bounds.normalize(pts)
        per_level = np.concatenate(
            [lv.query(tape, p_norm).value for lv in field.geo_levels], axis=1)
        np.testing.assert_array_equal(combined, per_level)

    def test_zero_factors_zero_appearance(self):
        store = make_store()
        field = build_field(store, unit_bounds(), geo_specs=[LevelSpec(0.5, 2)],
                            app_specs=[LevelSpec(0.5, 8)],
                            rng=np.random.default_rng(5))
        for lv in field.app_levels:
            for p in lv.params():
                p.value[...] = 0.0
        tape = Tape()
        out = field.query_app(tape, np.random.default_rng(6).uniform(0, 1, (4, 3)))
        np.testing.assert_array_equal(out.value, 0.0)


class TestDenseGrid:
    def test_constant_grid(self):
        store = make_store()
        grid = DenseGrid(store, "g", "grid_geo", unit_bounds(), 0.25, 2, 0.0,
                         np.random.default_rng(0))
        grid.values.value[...] = 3.25
        tape = Tape()
        out = grid.query(tape, np.random.default_rng(1).uniform(-1, 1, (30, 3)))
        np.testing.assert_allclose(out.value, 3.25, atol=1e-14)

    def test_vertex_query_is_exact(self):
        store = make_store()
        grid = DenseGrid(store, "g", "grid_geo", unit_bounds(), 0.25, 1, 0.3,
                         np.random.default_rng(2))
        nx, ny, nz = grid.resolution
        # normalized coordinates of vertex (1, 2, 3)
        p = np.array([[-1 + 2 * 1 / (nx - 1), -1 + 2 * 2 / (ny - 1),
                       -1 + 2 * 3 / (nz - 1)]])
        tape = Tape()
        out = grid.query(tape, p).value
        np.testing.assert_allclose(out[0], grid.values.value[1, 2, 3], atol=1e-12)

    def test_matches_trilinear_oracle(self):
        store = make_store()
        grid = DenseGrid(store, "g", "grid_geo", unit_bounds(), 0.25, 1, 0.4,
                         np.random.default_rng(3))
        rng = np.random.default_rng(4)
        pts = rng.uniform(-1.1, 1.1, (1000, 3))
        tape = Tape()
        got = grid.query(tape, pts).value
        for i in range(pts.shape[0]):
            expected = trilinear_oracle(grid.values.value, pts[i])
            assert abs(got[i, 0] - expected[0]) <= 1e-12

    def test_memory_cap_is_enforced(self):
        store = make_store()
        with pytest.raises(ValueError, match="MiB"):
            DenseGrid(store, "g", "grid_geo", unit_bounds(), 0.001, 32, 0.01,
                      np.random.default_rng(0))

    def test_dense_field_query_surface(self):
        store = make_store()
        field = build_dense_field(store, unit_bounds(), LevelSpec(0.25, 12),
                                  LevelSpec(0.25, 64), rng=np.random.default_rng(0))
        tape = Tape()
        pts = np.random.default_rng(1).uniform(0, 1, (5, 3))
        assert field.query_geo(tape, pts).shape == (5, 12)
        assert field.query_app(tape, pts).shape == (5, 64)


class TestBudgetMatching:
    def test_dense_cell_matches_budget(self):
        bounds = SceneBounds([0, 0, 0], [3.0, 3.0, 2.5])
        budget = 200_000
        cell = dense_cell_for_budget(bounds, 12, budget)
        res = [axis_resolution(e, cell) for e in bounds.extent]
        assert 12 * np.prod(res) <= budget
        finer = [axis_resolution(e, cell * 0.9) for e in bounds.extent]
        assert 12 * np.prod(finer) > budget * 0.5

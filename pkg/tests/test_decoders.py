"""Tests for the geometry / appearance decoder pair."""

import numpy as np
import pytest

from monomap import autodiff as ad
from monomap.autodiff import ParamStore, Tape
from monomap.decoders import (Mlp, build_app_decoder, build_geo_decoder,
                              decode_app, decode_app_nocoord, decode_geo)
from monomap.fields import LevelSpec, SceneBounds
from monomap.model import build_scene_model


def make_store():
    store = ParamStore()
    store.add_group("mlp_geo", 1e-5)
    store.add_group("mlp_app", 1e-5)
    return store


class TestGeoDecoder:
    def test_zero_weights_output_equals_bias(self):
        store = make_store()
        mlp = build_geo_decoder(store, 12, np.random.default_rng(0),
                                coarsest_cell=0.64)
        for w in mlp.weights:
            w.value[...] = 0.0
        tape = Tape()
        out = decode_geo(tape, mlp, np.random.default_rng(1).standard_normal((5, 12)))
        np.testing.assert_allclose(out.value, 0.1 * 0.64, atol=1e-15)

    def test_positive_homogeneity_without_biases(self):
        store = make_store()
        mlp = Mlp(store, "m", "mlp_geo", 6, 1, np.random.default_rng(2))
        for b in mlp.biases:
            b.value[...] = 0.0
        f = np.random.default_rng(3).standard_normal((8, 6))
        tape = Tape()
        base = decode_geo(tape, mlp, f).value
        scaled = decode_geo(tape, mlp, 2.5 * f).value
        np.testing.assert_allclose(scaled, 2.5 * base, rtol=1e-12)

    def test_feature_length_mismatch(self):
        store = make_store()
        mlp = build_geo_decoder(store, 12, np.random.default_rng(0))
        with pytest.raises(ValueError, match="12"):
            decode_geo(Tape(), mlp, np.zeros((3, 7)))

    def test_weight_gradients_match_finite_differences(self):
        store = make_store()
        rng = np.random.default_rng(4)
        mlp = Mlp(store, "m", "mlp_geo", 5, 1, rng)
        f = rng.standard_normal((6, 5))

        def run():
            tape = Tape()
            return tape, ad.reduce_sum(decode_geo(tape, mlp, f))

        tape, out = run()
        store.zero_grad()
        tape.backward(out)
        for p in mlp.params():
            def loss_at(arr, _p=p):
                keep = _p.value.copy()
                _p.value[...] = arr
                _, o = run()
                _p.value[...] = keep
                return o.value
            fd = ad.finite_difference(loss_at, p.value)
            assert ad.relative_error(p.grad, fd) <= 1e-4, p.name


class TestAppDecoder:
    def test_zero_weights_give_mid_gray(self):
        store = make_store()
        mlp = build_app_decoder(store, 8, np.random.default_rng(0))
        for p in mlp.params():
            p.value[...] = 0.0
        tape = Tape()
        out = decode_app(tape, mlp, np.zeros((4, 3)),
                         np.random.default_rng(1).standard_normal((4, 8)))
        np.testing.assert_allclose(out.value, 0.5, atol=1e-15)

    def test_coordinate_path_is_live(self):
        store = make_store()
        rng = np.random.default_rng(2)
        mlp = build_app_decoder(store, 8, rng)
        f = rng.standard_normal((1, 8))
        tape = Tape()
        p_var = tape.constant(rng.uniform(-1, 1, (1, 3)))
        out = decode_app(tape, mlp, p_var, f)
        tape.backward(ad.reduce_sum(out))
        assert p_var.grad is not None and np.any(p_var.grad != 0.0)

    def test_coordinate_gradient_matches_finite_differences(self):
        store = make_store()
        rng = np.random.default_rng(3)
        mlp = build_app_decoder(store, 6, rng)
        f = rng.standard_normal((2, 6))
        p0 = rng.uniform(-1, 1, (2, 3))

        tape = Tape()
        p_var = tape.constant(p0)
        tape.backward(ad.reduce_sum(decode_app(tape, mlp, p_var, f)))

        def loss_at(arr):
            t = Tape()
            return ad.reduce_sum(decode_app(t, mlp, arr.reshape(2, 3), f)).value
        fd = ad.finite_difference(loss_at, p0)
        assert ad.relative_error(p_var.grad, fd) <= 1e-4

    def test_output_strictly_inside_unit_interval(self):
        store = make_store()
        rng = np.random.default_rng(4)
        mlp = build_app_decoder(store, 8, rng)
        tape = Tape()
        out = decode_app(tape, mlp, rng.uniform(-1, 1, (64, 3)),
                         10.0 * rng.standard_normal((64, 8))).value
        assert np.all(out > 0.0) and np.all(out < 1.0)

    def test_input_width_mismatch(self):
        store = make_store()
        mlp = build_app_decoder(store, 64, np.random.default_rng(0))
        with pytest.raises(ValueError, match="67"):
            decode_app(Tape(), mlp, np.zeros((2, 3)), np.zeros((2, 32)))


class TestNoCoordVariant:
    def test_zero_weights_give_mid_gray(self):
        store = make_store()
        mlp = build_app_decoder(store, 8, np.random.default_rng(0), with_coords=False)
        for p in mlp.params():
            p.value[...] = 0.0
        out = decode_app_nocoord(Tape(), mlp, np.zeros((3, 8)))
        np.testing.assert_allclose(out.value, 0.5, atol=1e-15)

    def test_position_independent_by_construction(self):
        store = make_store()
        rng = np.random.default_rng(1)
        mlp = build_app_decoder(store, 8, rng, with_coords=False)
        f = rng.standard_normal((5, 8))
        a = decode_app_nocoord(Tape(), mlp, f).value
        b = decode_app_nocoord(Tape(), mlp, f).value
        assert np.array_equal(a, b)

    def test_model_flag_switches_path(self):
        bounds = SceneBounds([0, 0, 0], [1, 1, 1])
        model = build_scene_model(bounds, geo_specs=[LevelSpec(0.5, 2)],
                                  app_specs=[LevelSpec(0.5, 4)], app_coords=False,
                                  rng=np.random.default_rng(0))
        assert model.app_mlp.in_dim == 4
        pts = np.random.default_rng(1).uniform(0.1, 0.9, (3, 3))
        tape = Tape()
        _, color = model.decode(tape, pts)
        assert color.shape == (3, 3)


class TestDualPathSeparation:
    def test_appearance_params_cannot_move_sdf(self):
        bounds = SceneBounds([0, 0, 0], [1, 1, 1])
        model = build_scene_model(bounds, geo_specs=[LevelSpec(0.4, 2)],
                                  app_specs=[LevelSpec(0.4, 4)],
                                  rng=np.random.default_rng(0))
        pts = np.random.default_rng(1).uniform(0.1, 0.9, (6, 3))
        before = model.sdf_at(pts)
        for lv in model.field.app_levels:
            for p in lv.params():
                p.value += 0.37
        for p in model.app_mlp.params():
            p.value += 0.11
        assert np.array_equal(model.sdf_at(pts), before)

    def test_geometry_params_cannot_move_app_features(self):
        bounds = SceneBounds([0, 0, 0], [1, 1, 1])
        model = build_scene_model(bounds, geo_specs=[LevelSpec(0.4, 2)],
                                  app_specs=[LevelSpec(0.4, 4)],
                                  rng=np.random.default_rng(0))
        pts = np.random.default_rng(1).uniform(0.1, 0.9, (6, 3))
        tape = Tape()
        before = model.field.query_app(tape, pts).value.copy()
        for lv in model.field.geo_levels:
            for p in lv.params():
                p.value += 0.5
        for p in model.geo_mlp.params():
            p.value += 0.5
        after = model.field.query_app(Tape(), pts).value
        assert np.array_equal(after, before)

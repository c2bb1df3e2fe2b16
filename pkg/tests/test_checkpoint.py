"""Checkpoint serialization round-trips."""

import numpy as np
import pytest

from monomap.checkpoint import load_checkpoint, save_checkpoint
from monomap.errors import DataError
from monomap.fields import LevelSpec, SceneBounds
from monomap.model import build_scene_model


def small_model(field_mode="factorized", app_coords=True, seed=0):
    bounds = SceneBounds([0, 0, 0], [1.5, 1.2, 1.0])
    return build_scene_model(bounds, geo_specs=[LevelSpec(0.4, 2), LevelSpec(0.15, 2)],
                             app_specs=[LevelSpec(0.3, 8)],
                             field_mode=field_mode, app_coords=app_coords,
                             beta_init=12.0, rng=np.random.default_rng(seed))


class TestCheckpointRoundtrip:
    def test_values_identical_bitwise(self, tmp_path):
        model = small_model(seed=3)
        for p in model.store.params():
            p.value += np.random.default_rng(4).standard_normal(p.value.shape) * 0.1
        save_checkpoint(tmp_path / "c.bin", model)
        back = load_checkpoint(tmp_path / "c.bin")
        orig = {p.name: p for p in model.store.params()}
        for p in back.store.params():
            assert np.array_equal(p.value, orig[p.name].value), p.name
            assert p.group == orig[p.name].group
        assert back.beta_value() == model.beta_value()
        assert back.field_mode == model.field_mode
        assert back.app_coords == model.app_coords

    def test_decoded_outputs_identical(self, tmp_path):
        model = small_model(seed=5)
        save_checkpoint(tmp_path / "c.bin", model)
        back = load_checkpoint(tmp_path / "c.bin")
        pts = np.random.default_rng(6).uniform(0.1, 0.9, (20, 3))
        assert np.array_equal(back.sdf_at(pts), model.sdf_at(pts))
        assert np.array_equal(back.color_at(pts), model.color_at(pts))

    def test_dense_mode_roundtrip(self, tmp_path):
        model = small_model(field_mode="dense")
        save_checkpoint(tmp_path / "d.bin", model)
        back = load_checkpoint(tmp_path / "d.bin")
        assert back.field_mode == "dense"
        pts = np.random.default_rng(7).uniform(0.1, 0.9, (5, 3))
        assert np.array_equal(back.sdf_at(pts), model.sdf_at(pts))

    def test_nocoord_mode_roundtrip(self, tmp_path):
        model = small_model(app_coords=False)
        save_checkpoint(tmp_path / "n.bin", model)
        assert load_checkpoint(tmp_path / "n.bin").app_mlp.in_dim == 8

    def test_save_is_deterministic(self, tmp_path):
        model = small_model(seed=8)
        save_checkpoint(tmp_path / "a.bin", model)
        save_checkpoint(tmp_path / "b.bin", model)
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(b"nope" + b"\x00" * 64)
        with pytest.raises(DataError, match="magic"):
            load_checkpoint(tmp_path / "x.bin")

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "missing.bin")

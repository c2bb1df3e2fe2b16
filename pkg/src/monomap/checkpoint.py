"""Single-file binary checkpoints: versioned JSON header plus raw little-endian
float64 buffers for every parameter (grid factors, decoder weights, density
sharpness)."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .fields import LevelSpec, SceneBounds
from .model import SceneModel, build_scene_model

MAGIC = b"MMAP"
VERSION = 1


def save_checkpoint(path, model: SceneModel) -> None:
    path = Path(path)
    buffers = []
    offset = 0
    params = model.store.params()
    for p in params:
        buffers.append({
            "name": p.name,
            "group": p.group,
            "shape": list(p.value.shape),
            "offset": offset,
        })
        offset += p.value.size * 8
    header = {
        "format": "monomap-checkpoint",
        "bounds_min": model.bounds.min_corner.tolist(),
        "bounds_max": model.bounds.max_corner.tolist(),
        "field_mode": model.field_mode,
        "app_coords": model.app_coords,
        "geo_specs": [{"cell_size": s.cell_size, "channels": s.channels}
                      for s in model.geo_specs],
        "app_specs": [{"cell_size": s.cell_size, "channels": s.channels}
                      for s in model.app_specs],
        "init_scale": model.init_scale,
        "group_lrs": dict(model.store.groups),
        "buffers": buffers,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for p in params:
            f.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())


def load_checkpoint(path) -> SceneModel:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    if raw[:4] != MAGIC:
        raise DataError(f"{path} is not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    (header_len,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + header_len].decode("utf-8"))
    payload = raw[16 + header_len:]

    bounds = SceneBounds(header["bounds_min"], header["bounds_max"])
    geo_specs = [LevelSpec(s["cell_size"], s["channels"]) for s in header["geo_specs"]]
    app_specs = [LevelSpec(s["cell_size"], s["channels"]) for s in header["app_specs"]]
    lrs = header["group_lrs"]
    model = build_scene_model(
        bounds, geo_specs=geo_specs, app_specs=app_specs,
        field_mode=header["field_mode"], app_coords=header["app_coords"],
        init_scale=header["init_scale"],
        lr_grid=lrs["grid_geo"], lr_mlp=lrs["mlp_geo"], lr_beta=lrs["beta"],
        rng=np.random.default_rng(0))
    if lrs["grid_app"] != lrs["grid_geo"]:
        model.store.set_lr("grid_app", lrs["grid_app"])
    if lrs["mlp_app"] != lrs["mlp_geo"]:
        model.store.set_lr("mlp_app", lrs["mlp_app"])

    registered = {p.name: p for p in model.store.params()}
    recorded = {b["name"] for b in header["buffers"]}
    if set(registered) != recorded:
        raise DataError("checkpoint buffer set does not match the model layout")
    for entry in header["buffers"]:
        p = registered[entry["name"]]
        shape = tuple(entry["shape"])
        if shape != p.value.shape:
            raise DataError(
                f"checkpoint buffer {entry['name']!r} has shape {shape}, "
                f"expected {p.value.shape}")
        start = entry["offset"]
        count = p.value.size
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        p.value[...] = arr.reshape(shape)
    return model

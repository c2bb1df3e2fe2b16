"""Isosurface extraction from decoded SDFs and ASCII PLY mesh I/O."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from skimage import measure

from .errors import DataError
from .fields import SceneBounds

log = logging.getLogger(__name__)

MIN_TRIANGLE_AREA = 1e-12


@dataclass
class Mesh:
    vertices: np.ndarray            # (V, 3) meters
    faces: np.ndarray               # (F, 3) int
    colors: np.ndarray | None = None  # (V, 3) in [0, 1]

    @property
    def is_empty(self) -> bool:
        return self.vertices.shape[0] == 0 or self.faces.shape[0] == 0

    def triangle_areas(self) -> np.ndarray:
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def empty_mesh() -> Mesh:
    return Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))


def _drop_degenerate(mesh: Mesh) -> Mesh:
    if mesh.is_empty:
        return mesh
    keep = mesh.triangle_areas() > MIN_TRIANGLE_AREA
    return Mesh(mesh.vertices, mesh.faces[keep], mesh.colors)


def extract_mesh_from_sdf(sdf_fn, bounds: SceneBounds, cell_size: float,
                          chunk: int = 262_144) -> Mesh:
    """Marching cubes over ``sdf_fn`` sampled on a regular lattice.

    Returns an empty mesh (with a warning) when the field has no zero
    crossing anywhere in the bounds.
    """
    counts = [max(2, int(round(e / cell_size)) + 1) for e in bounds.extent]
    axes = [np.linspace(lo, hi, n) for lo, hi, n in
            zip(bounds.min_corner, bounds.max_corner, counts)]
    xs, ys, zs = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([xs.ravel(), ys.ravel(), zs.ravel()], axis=1)
    values = np.empty(pts.shape[0])
    for start in range(0, pts.shape[0], chunk):
        values[start:start + chunk] = sdf_fn(pts[start:start + chunk])
    volume = values.reshape(counts)
    if volume.min() > 0.0 or volume.max() < 0.0:
        log.warning("no zero crossing in the sampled SDF; returning empty mesh")
        return empty_mesh()
    spacing = tuple((hi - lo) / (n - 1) for lo, hi, n in
                    zip(bounds.min_corner, bounds.max_corner, counts))
    verts, faces, _, _ = measure.marching_cubes(volume, level=0.0, spacing=spacing)
    verts = verts + bounds.min_corner
    return _drop_degenerate(Mesh(np.asarray(verts, dtype=np.float64),
                                 np.asarray(faces, dtype=np.int64)))


def extract_mesh(model, cell_size: float, bounds: SceneBounds | None = None,
                 with_colors: bool = True, chunk: int = 262_144) -> Mesh:
    """Zero level set of the model's decoded SDF, with optional vertex colors."""
    bounds = model.bounds if bounds is None else bounds
    mesh = extract_mesh_from_sdf(model.sdf_at, bounds, cell_size, chunk=chunk)
    if with_colors and not mesh.is_empty:
        colors = np.empty_like(mesh.vertices)
        for start in range(0, mesh.vertices.shape[0], chunk):
            colors[start:start + chunk] = model.color_at(
                mesh.vertices[start:start + chunk])
        mesh.colors = np.clip(colors, 0.0, 1.0)
    return mesh


def write_ply(mesh: Mesh, path) -> None:
    """ASCII PLY with optional per-vertex uchar colors."""
    path = Path(path)
    has_color = mesh.colors is not None and not mesh.is_empty
    lines = ["ply", "format ascii 1.0",
             f"element vertex {mesh.vertices.shape[0]}",
             "property float x", "property float y", "property float z"]
    if has_color:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines += [f"element face {mesh.faces.shape[0]}",
              "property list uchar int vertex_indices", "end_header"]
    body = []
    if has_color:
        rgb = np.clip(np.round(mesh.colors * 255.0), 0, 255).astype(int)
        for v, c in zip(mesh.vertices, rgb):
            body.append(f"{v[0]:.8f} {v[1]:.8f} {v[2]:.8f} {c[0]} {c[1]} {c[2]}")
    else:
        for v in mesh.vertices:
            body.append(f"{v[0]:.8f} {v[1]:.8f} {v[2]:.8f}")
    for f in mesh.faces:
        body.append(f"3 {f[0]} {f[1]} {f[2]}")
    path.write_text("\n".join(lines + body) + "\n")


def read_ply(path) -> Mesh:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise DataError(f"cannot read mesh {path}: {e}") from e
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise DataError(f"{path} is not a PLY file")
    n_vert = n_face = 0
    has_color = False
    i = 0
    for i, line in enumerate(lines):
        tok = line.split()
        if tok[:2] == ["element", "vertex"]:
            n_vert = int(tok[2])
        elif tok[:2] == ["element", "face"]:
            n_face = int(tok[2])
        elif tok[:2] == ["property", "uchar"] and tok[2] in ("red", "green", "blue"):
            has_color = True
        elif tok == ["end_header"]:
            break
    else:
        raise DataError(f"{path}: missing end_header")
    body = lines[i + 1:]
    verts = np.zeros((n_vert, 3))
    colors = np.zeros((n_vert, 3)) if has_color else None
    for j in range(n_vert):
        tok = body[j].split()
        verts[j] = [float(t) for t in tok[:3]]
        if has_color:
            colors[j] = [int(t) / 255.0 for t in tok[3:6]]
    faces = np.zeros((n_face, 3), dtype=np.int64)
    for j in range(n_face):
        tok = body[n_vert + j].split()
        if tok[0] != "3":
            raise DataError(f"{path}: only triangle faces are supported")
        faces[j] = [int(t) for t in tok[1:4]]
    return Mesh(verts, faces, colors)

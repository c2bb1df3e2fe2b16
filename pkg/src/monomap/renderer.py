"""Ray generation, stratified sampling, and differentiable volume rendering.

Geometry reaches the pixel through a proxy: the decoded signed distance is
mapped to a density sigma = beta * sigmoid(-beta * s) and composited
front-to-back. Two alternative weightings (occupancy product, direct SDF
windowing) exist for the rendering-mode comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .fields import SceneBounds
from .model import SceneModel

RENDER_MODES = ("sdf_density", "sdf_direct", "occupancy")
DEFAULT_SAMPLES_PER_RAY = 96
DEFAULT_NEAR_MIN = 0.01
DEFAULT_SDF_TRUNC = 0.05
# opacity below this marks a pixel as empty for masking and reprojection
ACC_VALID_THRESHOLD = 0.5


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


class Pose:
    """Rigid world-from-camera transform."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation, translation) -> None:
        r = np.asarray(rotation, dtype=np.float64).reshape(3, 3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
            raise ValueError("rotation is not orthonormal")
        if np.linalg.det(r) < 0.0:
            raise ValueError("rotation must be proper (det +1)")
        self.rotation = r
        self.translation = np.asarray(translation, dtype=np.float64).reshape(3)

    @classmethod
    def from_quaternion(cls, tx, ty, tz, qx, qy, qz, qw) -> "Pose":
        q = np.array([qx, qy, qz, qw], dtype=np.float64)
        q = q / np.linalg.norm(q)
        x, y, z, w = q
        r = np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ])
        return cls(r, [tx, ty, tz])

    def to_quaternion(self) -> np.ndarray:
        """(qx, qy, qz, qw) with qw >= 0."""
        r = self.rotation
        t = np.trace(r)
        if t > 0:
            s = np.sqrt(t + 1.0) * 2.0
            w = 0.25 * s
            x = (r[2, 1] - r[1, 2]) / s
            y = (r[0, 2] - r[2, 0]) / s
            z = (r[1, 0] - r[0, 1]) / s
        else:
            i = int(np.argmax(np.diag(r)))
            j, k = (i + 1) % 3, (i + 2) % 3
            s = np.sqrt(1.0 + r[i, i] - r[j, j] - r[k, k]) * 2.0
            vals = np.zeros(3)
            vals[i] = 0.25 * s
            vals[j] = (r[j, i] + r[i, j]) / s
            vals[k] = (r[k, i] + r[i, k]) / s
            w = (r[k, j] - r[j, k]) / s
            x, y, z = vals
        q = np.array([x, y, z, w])
        if w < 0:
            q = -q
        return q / np.linalg.norm(q)

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0)) -> "Pose":
        """Camera at ``eye`` with +z (optical axis) toward ``target``."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        norm = np.linalg.norm(fwd)
        if norm < 1e-12:
            raise ValueError("look_at: eye and target coincide")
        fwd = fwd / norm
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(fwd, up)
        if np.linalg.norm(right) < 1e-9:
            up = np.array([0.0, 1.0, 0.0])
            right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        r = np.stack([right, down, fwd], axis=1)
        return cls(r, eye)

    def __repr__(self) -> str:
        return f"Pose(t={self.translation.tolist()})"


def generate_rays(intrinsics: CameraIntrinsics, pose: Pose,
                  pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit rays through continuous pixel coordinates (u, v).

    Integer pixel (i, j) should be addressed at its center (i + 0.5, j + 0.5).
    """
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    u, v = pixels[:, 0], pixels[:, 1]
    if np.any(u < 0) or np.any(u > intrinsics.width) or \
            np.any(v < 0) or np.any(v > intrinsics.height):
        raise ValueError("pixel coordinates outside the image bounds")
    d_cam = np.stack([(u - intrinsics.cx) / intrinsics.fx,
                      (v - intrinsics.cy) / intrinsics.fy,
                      np.ones_like(u)], axis=1)
    d_world = d_cam @ pose.rotation.T
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    origins = np.broadcast_to(pose.translation, d_world.shape).copy()
    return origins, d_world


def pixel_grid(intrinsics: CameraIntrinsics) -> np.ndarray:
    """Centers of every pixel, row-major, shape (H*W, 2)."""
    us = np.arange(intrinsics.width) + 0.5
    vs = np.arange(intrinsics.height) + 0.5
    uu, vv = np.meshgrid(us, vs)
    return np.stack([uu.ravel(), vv.ravel()], axis=1)


def ray_box_range(bounds: SceneBounds, origins: np.ndarray, dirs: np.ndarray,
                  near_min: float = DEFAULT_NEAR_MIN
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Slab intersection: per-ray (near, far, hit) against the scene box."""
    with np.errstate(divide="ignore"):
        inv = 1.0 / dirs
    t0 = (bounds.min_corner - origins) * inv
    t1 = (bounds.max_corner - origins) * inv
    tmin = np.minimum(t0, t1).max(axis=1)
    tmax = np.maximum(t0, t1).min(axis=1)
    near = np.maximum(tmin, near_min)
    hit = tmax > near
    return near, tmax, hit


@dataclass
class RaySampleBatch:
    """Per-ray stratified samples: depths are sorted, spacings positive."""

    origins: np.ndarray     # (R, 3)
    directions: np.ndarray  # (R, 3), unit
    z: np.ndarray           # (R, N), ascending
    deltas: np.ndarray      # (R, N), z[i+1]-z[i], last = far remainder

    @property
    def num_rays(self) -> int:
        return self.z.shape[0]

    @property
    def samples_per_ray(self) -> int:
        return self.z.shape[1]

    @property
    def positions(self) -> np.ndarray:
        """(R, N, 3) world positions o + z * d."""
        return self.origins[:, None, :] + self.directions[:, None, :] * self.z[..., None]

    def slice(self, sel) -> "RaySampleBatch":
        return RaySampleBatch(self.origins[sel], self.directions[sel],
                              self.z[sel], self.deltas[sel])


def stratified_samples(origins: np.ndarray, dirs: np.ndarray, near, far,
                       n: int, rng: np.random.Generator) -> RaySampleBatch:
    """One uniform sample per stratum of [near, far) split into n equal bins."""
    if n < 2:
        raise ValueError("need at least 2 samples per ray")
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    r = origins.shape[0]
    near = np.broadcast_to(np.asarray(near, dtype=np.float64), (r,))
    far = np.broadcast_to(np.asarray(far, dtype=np.float64), (r,))
    if np.any(far <= near):
        raise ValueError("far must exceed near for every ray")
    u = rng.random((r, n))
    k = np.arange(n)
    width = (far - near)[:, None]
    z = near[:, None] + width * (k + u) / n
    deltas = np.empty_like(z)
    deltas[:, :-1] = np.diff(z, axis=1)
    deltas[:, -1] = far - z[:, -1]
    return RaySampleBatch(origins, dirs, z, deltas)


def sdf_to_density(tape: Tape, sdf, beta) -> Var:
    """Density proxy sigma = beta * sigmoid(-beta * s); in (0, beta),
    monotonically decreasing in s."""
    return beta * ad.sigmoid(-(beta * sdf))


def densities_to_weights(tape: Tape, sigma, deltas) -> Var:
    """Front-to-back composition: w_i = T_i * (1 - exp(-sigma_i * delta_i))
    with T_i = exp(-sum_{k<i} sigma_k * delta_k)."""
    sd = sigma * deltas
    transmittance = ad.exp(-ad.cumsum_exclusive(sd, axis=-1))
    return transmittance * (1.0 - ad.exp(-sd))


def occupancy_weights(tape: Tape, occ) -> Var:
    """w_i = o_i * prod_{k<i} (1 - o_k)."""
    survive = ad.log(1.0 - occ)
    transmittance = ad.exp(ad.cumsum_exclusive(survive, axis=-1))
    return transmittance * occ


def sdf_direct_weights(tape: Tape, sdf, trunc: float) -> Var:
    """Truncation-windowed direct weighting, normalized along the ray."""
    w = ad.sigmoid(sdf * (1.0 / trunc)) * ad.sigmoid(sdf * (-1.0 / trunc))
    denom = ad.reduce_sum(w, axis=-1, keepdims=True) + 1e-12
    return w / denom


def integrate(tape: Tape, weights, colors, z) -> tuple[Var, Var, Var]:
    """Weighted sums along the ray: color, depth, accumulated opacity."""
    wv, cv, zv = ad._val(weights), ad._val(colors), np.asarray(z)
    if wv.shape != zv.shape or cv.shape != wv.shape + (3,):
        raise ValueError(
            f"integrate: mismatched shapes w{wv.shape} c{cv.shape} z{zv.shape}")
    w3 = ad.reshape(weights, wv.shape + (1,))
    color = ad.reduce_sum(w3 * colors, axis=-2)
    depth = ad.reduce_sum(weights * z, axis=-1)
    acc = ad.reduce_sum(weights, axis=-1)
    return color, depth, acc


@dataclass
class RenderResult:
    """Differentiable per-ray outputs; ``.value`` on any field gives numpy."""

    color: Var    # (R, 3)
    depth: Var    # (R,)
    weights: Var  # (R, N)
    acc: Var      # (R,)
    raw_geo: Var  # (R, N) decoded geometry (SDF or occupancy logit)


def render_batch(tape: Tape, model: SceneModel, batch: RaySampleBatch,
                 mode: str = "sdf_density", trunc: float = DEFAULT_SDF_TRUNC,
                 chunk_rays: int | None = None) -> RenderResult:
    """Render a sample batch; chunked evaluation composes bitwise with the
    single-pass result."""
    if mode not in RENDER_MODES:
        raise ValueError(f"unknown render mode {mode!r}; expected {RENDER_MODES}")
    r = batch.num_rays
    if chunk_rays is None or chunk_rays >= r:
        return _render_whole(tape, model, batch, mode, trunc)
    parts = [_render_whole(tape, model, batch.slice(slice(i, i + chunk_rays)),
                           mode, trunc)
             for i in range(0, r, chunk_rays)]
    return RenderResult(
        color=ad.concat([p.color for p in parts], axis=0),
        depth=ad.concat([p.depth for p in parts], axis=0),
        weights=ad.concat([p.weights for p in parts], axis=0),
        acc=ad.concat([p.acc for p in parts], axis=0),
        raw_geo=ad.concat([p.raw_geo for p in parts], axis=0),
    )


def _render_whole(tape: Tape, model: SceneModel, batch: RaySampleBatch,
                  mode: str, trunc: float) -> RenderResult:
    r, n = batch.z.shape
    positions = batch.positions.reshape(-1, 3)
    raw_flat, color_flat = model.decode(tape, positions)
    raw = ad.reshape(raw_flat, (r, n))
    colors = ad.reshape(color_flat, (r, n, 3))
    if mode == "sdf_density":
        sigma = sdf_to_density(tape, raw, model.beta(tape))
        weights = densities_to_weights(tape, sigma, batch.deltas)
    elif mode == "occupancy":
        occ = ad.sigmoid(raw) * (1.0 - 1e-7)
        weights = occupancy_weights(tape, occ)
    else:
        weights = sdf_direct_weights(tape, raw, trunc)
    color, depth, acc = integrate(tape, weights, colors, batch.z)
    return RenderResult(color, depth, weights, acc, raw)


def render_pixels(model: SceneModel, intrinsics: CameraIntrinsics, pose: Pose,
                  pixels: np.ndarray, n_samples: int, rng: np.random.Generator,
                  mode: str = "sdf_density", near_min: float = DEFAULT_NEAR_MIN,
                  trunc: float = DEFAULT_SDF_TRUNC,
                  chunk_rays: int | None = 4096) -> dict[str, np.ndarray]:
    """Forward-only render of arbitrary pixels; rays missing the scene bounds
    come back with zero opacity."""
    origins, dirs = generate_rays(intrinsics, pose, pixels)
    near, far, hit = ray_box_range(model.bounds, origins, dirs, near_min)
    m = pixels.shape[0]
    out = {
        "color": np.zeros((m, 3)),
        "depth": np.zeros(m),
        "acc": np.zeros(m),
    }
    if np.any(hit):
        tape = Tape()
        batch = stratified_samples(origins[hit], dirs[hit], near[hit], far[hit],
                                   n_samples, rng)
        res = render_batch(tape, model, batch, mode=mode, trunc=trunc,
                           chunk_rays=chunk_rays)
        out["color"][hit] = res.color.value
        out["depth"][hit] = res.depth.value
        out["acc"][hit] = res.acc.value
        tape.release()
    return out


def render_view(model: SceneModel, intrinsics: CameraIntrinsics, pose: Pose,
                n_samples: int, rng: np.random.Generator,
                mode: str = "sdf_density", near_min: float = DEFAULT_NEAR_MIN,
                trunc: float = DEFAULT_SDF_TRUNC,
                chunk_rays: int | None = 4096) -> dict[str, np.ndarray]:
    """Full-frame forward render: color (H,W,3), depth (H,W), acc (H,W)."""
    pixels = pixel_grid(intrinsics)
    flat = render_pixels(model, intrinsics, pose, pixels, n_samples, rng,
                         mode=mode, near_min=near_min, trunc=trunc,
                         chunk_rays=chunk_rays)
    h, w = intrinsics.height, intrinsics.width
    return {
        "color": flat["color"].reshape(h, w, 3),
        "depth": flat["depth"].reshape(h, w),
        "acc": flat["acc"].reshape(h, w),
    }

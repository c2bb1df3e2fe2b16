"""Analytic test scenes with exact ground truth.

A scene is a signed distance field composed of primitives (a hollow box room,
spheres, boxes), a procedural albedo, and a fixed point light. Ground-truth
images come from sphere tracing the analytic SDF and shading the hit point;
ground-truth depth is the ray distance of the same trace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import DataError
from .fields import SceneBounds
from .renderer import CameraIntrinsics, Pose, generate_rays, pixel_grid

TRACE_EPS = 1e-5
TRACE_STEPS = 256
BOUNDS_MARGIN = 0.12  # wall shell kept inside the mapped volume


@dataclass(frozen=True)
class SphereSpec:
    center: tuple[float, float, float]
    radius: float
    color: tuple[float, float, float]


@dataclass(frozen=True)
class BoxSpec:
    center: tuple[float, float, float]
    half_extent: tuple[float, float, float]
    color: tuple[float, float, float]


@dataclass(frozen=True)
class SceneSpec:
    """Box room (interior size in meters, floor at z=0) plus objects."""

    room_size: tuple[float, float, float] = (3.0, 3.0, 2.5)
    objects: tuple = ()
    textured_walls: bool = True
    wall_color: tuple[float, float, float] = (0.75, 0.72, 0.68)
    light: tuple[float, float, float] = (0.4, -0.3, 2.1)


def desk_scene() -> SceneSpec:
    """3 x 3 x 2.5 m room, textured walls, two objects."""
    return SceneSpec(
        room_size=(3.0, 3.0, 2.5),
        objects=(
            SphereSpec(center=(0.8, 0.9, 0.45), radius=0.45, color=(0.85, 0.3, 0.25)),
            BoxSpec(center=(-0.9, -0.7, 0.3), half_extent=(0.35, 0.45, 0.3),
                    color=(0.25, 0.45, 0.8)),
        ),
        textured_walls=True,
    )


def textureless_scene() -> SceneSpec:
    """Same room with untextured walls; exercises warping ambiguity."""
    return SceneSpec(
        room_size=(3.0, 3.0, 2.5),
        objects=(
            SphereSpec(center=(0.8, 0.9, 0.45), radius=0.45, color=(0.85, 0.3, 0.25)),
            BoxSpec(center=(-0.9, -0.7, 0.3), half_extent=(0.35, 0.45, 0.3),
                    color=(0.25, 0.45, 0.8)),
        ),
        textured_walls=False,
    )


def _sdf_box(p: np.ndarray, center: np.ndarray, half: np.ndarray) -> np.ndarray:
    d = np.abs(p - center) - half
    outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
    inside = np.minimum(np.max(d, axis=-1), 0.0)
    return outside + inside


class AnalyticScene:
    """Evaluable SDF + albedo + shading for one SceneSpec."""

    def __init__(self, spec: SceneSpec) -> None:
        self.spec = spec
        sx, sy, sz = spec.room_size
        self.room_center = np.array([0.0, 0.0, sz / 2.0])
        self.room_half = np.array([sx / 2.0, sy / 2.0, sz / 2.0])
        self.light = np.asarray(spec.light, dtype=np.float64)
        interior_min = self.room_center - self.room_half
        interior_max = self.room_center + self.room_half
        self.bounds = SceneBounds(interior_min - BOUNDS_MARGIN,
                                  interior_max + BOUNDS_MARGIN)

    # -- geometry

    def sdf(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        # the room solid is the complement of the interior box
        d = -_sdf_box(p, self.room_center, self.room_half)
        for obj in self.spec.objects:
            if isinstance(obj, SphereSpec):
                d_obj = np.linalg.norm(p - np.asarray(obj.center), axis=-1) - obj.radius
            else:
                d_obj = _sdf_box(p, np.asarray(obj.center), np.asarray(obj.half_extent))
            d = np.minimum(d, d_obj)
        return d

    def normal(self, p: np.ndarray, h: float = 1e-5) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        n = np.empty_like(p)
        for a in range(3):
            dp = np.zeros(3)
            dp[a] = h
            n[..., a] = self.sdf(p + dp) - self.sdf(p - dp)
        norm = np.linalg.norm(n, axis=-1, keepdims=True)
        return n / np.maximum(norm, 1e-12)

    def _object_id(self, p: np.ndarray) -> np.ndarray:
        """0 = room shell, i+1 = object i; by nearest SDF."""
        p = np.asarray(p, dtype=np.float64)
        best = np.abs(-_sdf_box(p, self.room_center, self.room_half))
        ids = np.zeros(p.shape[:-1], dtype=np.int64)
        for i, obj in enumerate(self.spec.objects):
            if isinstance(obj, SphereSpec):
                d = np.abs(np.linalg.norm(p - np.asarray(obj.center), axis=-1) - obj.radius)
            else:
                d = np.abs(_sdf_box(p, np.asarray(obj.center), np.asarray(obj.half_extent)))
            closer = d < best
            ids[closer] = i + 1
            best = np.minimum(best, d)
        return ids

    # -- appearance

    def albedo(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        ids = self._object_id(p)
        out = np.empty(p.shape[:-1] + (3,))
        wall = np.asarray(self.spec.wall_color)
        if self.spec.textured_walls:
            tex = (0.22 * np.sin(5.1 * p[..., 0]) * np.cos(4.3 * p[..., 1])
                   + 0.18 * np.sin(6.7 * p[..., 2] + 1.3)
                   + 0.12 * np.cos(8.9 * (p[..., 0] + p[..., 2])))
            out[...] = wall * (1.0 + tex[..., None] * np.array([0.9, 1.0, 1.1]))
        else:
            out[...] = wall
        for i, obj in enumerate(self.spec.objects):
            m = ids == i + 1
            base = np.asarray(obj.color)
            swirl = 0.15 * np.sin(9.0 * p[..., 0] + 7.0 * p[..., 1] + 5.0 * p[..., 2])
            out[m] = base * (1.0 + swirl[m, None])
        return np.clip(out, 0.02, 0.98)

    def shade(self, p: np.ndarray) -> np.ndarray:
        """Lambertian shading under the fixed point light, plus ambient."""
        n = self.normal(p)
        to_light = self.light - p
        to_light /= np.maximum(np.linalg.norm(to_light, axis=-1, keepdims=True), 1e-12)
        diffuse = np.maximum((n * to_light).sum(axis=-1), 0.0)
        return np.clip(self.albedo(p) * (0.35 + 0.65 * diffuse[..., None]), 0.0, 1.0)

    # -- tracing

    def trace(self, origins: np.ndarray, dirs: np.ndarray,
              t_max: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Sphere-trace first hits; returns (ray distance, hit mask)."""
        if t_max is None:
            t_max = self.bounds.diagonal * 1.5
        t = np.zeros(origins.shape[0])
        alive = np.ones(origins.shape[0], dtype=bool)
        for _ in range(TRACE_STEPS):
            if not alive.any():
                break
            p = origins[alive] + dirs[alive] * t[alive, None]
            d = self.sdf(p)
            t[alive] += d
            still = (d >= TRACE_EPS) & (t[alive] <= t_max)
            idx = np.flatnonzero(alive)
            alive[idx[~still]] = False
        hit = t <= t_max
        return t, hit

    def render_view(self, intrinsics: CameraIntrinsics, pose: Pose
                    ) -> tuple[np.ndarray, np.ndarray]:
        """Ground-truth color image and z-depth map for one camera."""
        eye = pose.translation
        if self.sdf(eye[None])[0] <= 0.0 or not self.bounds.contains(eye):
            raise DataError(f"camera at {eye.tolist()} is outside the free space")
        pixels = pixel_grid(intrinsics)
        origins, dirs = generate_rays(intrinsics, pose, pixels)
        t, hit = self.trace(origins, dirs)
        points = origins + dirs * t[:, None]
        color = np.zeros((pixels.shape[0], 3))
        color[hit] = self.shade(points[hit])
        dir_cam_z = dirs @ pose.rotation[:, 2]
        z_depth = np.where(hit, t * dir_cam_z, 0.0)
        h, w = intrinsics.height, intrinsics.width
        return color.reshape(h, w, 3), z_depth.reshape(h, w)


@dataclass(frozen=True)
class OrbitTrajectory:
    """Circular camera path with an oscillating gaze.

    The camera rides a circle at fixed height; its gaze starts outward and
    oscillates in pitch and yaw so floors, ceilings, and the room interior
    all get observed. Zero amplitudes give a plain outward-looking orbit.
    """

    n_frames: int = 60
    radius: float = 0.75
    height: float = 1.25
    look_distance: float = 1.5
    pitch_amplitude_deg: float = 18.0
    pitch_cycles: int = 3
    yaw_amplitude_deg: float = 0.0
    yaw_cycles: int = 1
    yaw_phase_rad: float = -0.785  # gaze near outward over the first frames
    height_amplitude: float = 0.0  # tilts the orbit: z = height + A sin(angle)

    def poses(self) -> list[Pose]:
        out = []
        for k in range(self.n_frames):
            angle = 2.0 * math.pi * k / self.n_frames
            eye = np.array([self.radius * math.cos(angle),
                            self.radius * math.sin(angle),
                            self.height + self.height_amplitude * math.sin(angle)])
            phase = 2.0 * math.pi * k / self.n_frames
            pitch = math.radians(self.pitch_amplitude_deg) * \
                math.sin(self.pitch_cycles * phase)
            yaw = angle + math.radians(self.yaw_amplitude_deg) * \
                math.sin(self.yaw_cycles * phase + self.yaw_phase_rad)
            look_dir = np.array([math.cos(yaw) * math.cos(pitch),
                                 math.sin(yaw) * math.cos(pitch),
                                 math.sin(pitch)])
            out.append(Pose.look_at(eye, eye + look_dir * self.look_distance))
        return out


def default_intrinsics(width: int = 64, height: int = 64,
                       fov_deg: float = 85.0) -> CameraIntrinsics:
    f = 0.5 * width / math.tan(math.radians(fov_deg) / 2.0)
    return CameraIntrinsics(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0,
                            width=width, height=height)


def generate_synthetic(spec: SceneSpec, trajectory: OrbitTrajectory,
                       intrinsics: CameraIntrinsics, rng=None):
    """Dataset with exact poses, GT color, GT z-depth, and a GT mesh."""
    from .datasets import Dataset
    from .mapper import Frame
    from .meshing import extract_mesh_from_sdf

    scene = AnalyticScene(spec)
    frames = []
    gt_depths = {}
    for i, pose in enumerate(trajectory.poses()):
        color, depth = scene.render_view(intrinsics, pose)
        frames.append(Frame(frame_id=i, image=color, pose=pose,
                            intrinsics=intrinsics, timestamp=float(i)))
        gt_depths[i] = depth
    gt_mesh = extract_mesh_from_sdf(scene.sdf, scene.bounds, cell_size=0.02)
    return Dataset(frames=frames, bounds=scene.bounds, gt_depths=gt_depths,
                   gt_mesh=gt_mesh)

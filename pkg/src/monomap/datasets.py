"""Posed-RGB dataset directories.

Layout:
    intrinsics.txt   fx fy cx cy width height
    poses.txt        one line per frame: id tx ty tz qx qy qz qw
                     (world-from-camera, translation in meters)
    rgb/000000.png   8-bit color, file name is the zero-padded frame id
    depth/000000.png optional 16-bit PNG, millimeters, z-depth
    bounds.txt       optional: min_x min_y min_z max_x max_y max_z
    gt_mesh.ply      optional ground-truth mesh

Missing bounds are inferred from the camera trajectory's bounding box
inflated by a margin.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .fields import SceneBounds
from .mapper import Frame
from .meshing import Mesh, read_ply, write_ply
from .renderer import CameraIntrinsics, Pose

log = logging.getLogger(__name__)

DEPTH_SCALE = 1000.0  # stored millimeters per meter
DEFAULT_BOUNDS_MARGIN = 3.0
QUATERNION_TOL = 1e-3


@dataclass
class Dataset:
    frames: list[Frame]
    bounds: SceneBounds
    gt_depths: dict[int, np.ndarray] = dc_field(default_factory=dict)
    gt_mesh: Mesh | None = None

    def __post_init__(self):
        ids = [f.frame_id for f in self.frames]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise DataError("frame ids must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frames)


def _frame_name(frame_id: int) -> str:
    return f"{frame_id:06d}.png"


def save_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    (path / "rgb").mkdir(parents=True, exist_ok=True)
    intr = dataset.frames[0].intrinsics
    (path / "intrinsics.txt").write_text(
        f"{intr.fx} {intr.fy} {intr.cx} {intr.cy} {intr.width} {intr.height}\n")
    pose_lines = []
    for f in dataset.frames:
        q = f.pose.to_quaternion()
        t = f.pose.translation
        pose_lines.append(
            f"{f.frame_id} {t[0]:.9f} {t[1]:.9f} {t[2]:.9f} "
            f"{q[0]:.9f} {q[1]:.9f} {q[2]:.9f} {q[3]:.9f}")
        rgb = np.clip(np.round(f.image * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(rgb).save(path / "rgb" / _frame_name(f.frame_id))
    (path / "poses.txt").write_text("\n".join(pose_lines) + "\n")
    b = dataset.bounds
    (path / "bounds.txt").write_text(
        " ".join(f"{v:.9f}" for v in np.concatenate([b.min_corner, b.max_corner]))
        + "\n")
    if dataset.gt_depths:
        (path / "depth").mkdir(exist_ok=True)
        for fid, depth in dataset.gt_depths.items():
            mm = np.clip(np.round(depth * DEPTH_SCALE), 0, 65535).astype(np.uint16)
            Image.fromarray(mm).save(path / "depth" / _frame_name(fid))
    if dataset.gt_mesh is not None and not dataset.gt_mesh.is_empty:
        write_ply(dataset.gt_mesh, path / "gt_mesh.ply")


def load_dataset(path, bounds_margin: float = DEFAULT_BOUNDS_MARGIN) -> Dataset:
    path = Path(path)
    intr_file = path / "intrinsics.txt"
    if not intr_file.exists():
        raise DataError(f"missing {intr_file}")
    vals = intr_file.read_text().split()
    if len(vals) != 6:
        raise DataError(f"{intr_file}: expected 6 values, got {len(vals)}")
    intr = CameraIntrinsics(fx=float(vals[0]), fy=float(vals[1]),
                            cx=float(vals[2]), cy=float(vals[3]),
                            width=int(vals[4]), height=int(vals[5]))

    poses_file = path / "poses.txt"
    if not poses_file.exists():
        raise DataError(f"missing {poses_file}")
    poses: dict[int, Pose] = {}
    for lineno, line in enumerate(poses_file.read_text().splitlines(), 1):
        if not line.strip():
            continue
        tok = line.split()
        if len(tok) != 8:
            raise DataError(f"{poses_file}:{lineno}: expected 8 fields")
        fid = int(tok[0])
        tx, ty, tz, qx, qy, qz, qw = (float(t) for t in tok[1:])
        norm = np.sqrt(qx * qx + qy * qy + qz * qz + qw * qw)
        if abs(norm - 1.0) > QUATERNION_TOL:
            raise DataError(
                f"{poses_file}:{lineno}: quaternion norm {norm:.6f} is not 1")
        poses[fid] = Pose.from_quaternion(tx, ty, tz, qx, qy, qz, qw)

    rgb_dir = path / "rgb"
    if not rgb_dir.is_dir():
        raise DataError(f"missing {rgb_dir}")
    frames = []
    gt_depths: dict[int, np.ndarray] = {}
    for img_path in sorted(rgb_dir.glob("*.png")):
        fid = int(img_path.stem)
        if fid not in poses:
            raise DataError(f"no pose for image {img_path}")
        try:
            rgb = np.asarray(Image.open(img_path).convert("RGB"), dtype=np.float64)
        except OSError as e:
            raise DataError(f"unreadable image {img_path}: {e}") from e
        frames.append(Frame(frame_id=fid, image=rgb / 255.0, pose=poses[fid],
                            intrinsics=intr, timestamp=float(fid)))
        depth_path = path / "depth" / img_path.name
        if depth_path.exists():
            try:
                raw = np.asarray(Image.open(depth_path), dtype=np.float64)
            except OSError as e:
                raise DataError(f"unreadable depth image {depth_path}: {e}") from e
            gt_depths[fid] = raw / DEPTH_SCALE
    if not frames:
        raise DataError(f"no rgb frames found under {rgb_dir}")

    bounds_file = path / "bounds.txt"
    if bounds_file.exists():
        vals = [float(v) for v in bounds_file.read_text().split()]
        if len(vals) != 6:
            raise DataError(f"{bounds_file}: expected 6 values")
        bounds = SceneBounds(vals[:3], vals[3:])
    else:
        centers = np.stack([f.pose.translation for f in frames])
        bounds = SceneBounds(centers.min(axis=0) - bounds_margin,
                             centers.max(axis=0) + bounds_margin)
        log.info("bounds.txt missing; inferred %s from the trajectory", bounds)

    mesh_path = path / "gt_mesh.ply"
    gt_mesh = read_ply(mesh_path) if mesh_path.exists() else None
    return Dataset(frames=frames, bounds=bounds, gt_depths=gt_depths,
                   gt_mesh=gt_mesh)


def ray_to_z_factor(intrinsics: CameraIntrinsics) -> np.ndarray:
    """Per-pixel factor converting ray-distance depth to camera z-depth."""
    us = (np.arange(intrinsics.width) + 0.5 - intrinsics.cx) / intrinsics.fx
    vs = (np.arange(intrinsics.height) + 0.5 - intrinsics.cy) / intrinsics.fy
    uu, vv = np.meshgrid(us, vs)
    return 1.0 / np.sqrt(uu * uu + vv * vv + 1.0)

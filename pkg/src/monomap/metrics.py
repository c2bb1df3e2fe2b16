"""Evaluation metrics: PSNR, image SSIM, depth L1, and mesh accuracy /
completion / completion ratio."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .autodiff import Tape
from .errors import DataError
from .losses import ssim as patch_ssim
from .meshing import Mesh

PSNR_CAP_DB = 99.0
MESH_SAMPLES = 100_000
COMP_THRESHOLD_M = 0.05
ACC_MASK_THRESHOLD = 0.5


@dataclass
class MetricReport:
    psnr_db: float | None = None
    ssim: float | None = None
    depth_l1_cm: float | None = None
    acc_cm: float | None = None
    comp_cm: float | None = None
    comp_ratio_pct: float | None = None

    def as_dict(self) -> dict:
        return {
            "psnr_db": self.psnr_db,
            "ssim": self.ssim,
            "depth_l1_cm": self.depth_l1_cm,
            "acc_cm": self.acc_cm,
            "comp_cm": self.comp_cm,
            "comp_ratio_pct": self.comp_ratio_pct,
        }


def psnr(image: np.ndarray, reference: np.ndarray) -> float:
    """10 log10(1 / MSE) on [0, 1] images, capped at 99 dB."""
    image = np.asarray(image, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if image.shape != reference.shape:
        raise ValueError(f"psnr: shapes differ {image.shape} vs {reference.shape}")
    mse = float(np.mean((image - reference) ** 2))
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


def image_ssim(image: np.ndarray, reference: np.ndarray, window: int = 7) -> float:
    """Mean local SSIM over all stride-1 windows, per-channel-averaged gray."""
    a = np.asarray(image, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.ndim == 3:
        a = a.mean(axis=2)
    if b.ndim == 3:
        b = b.mean(axis=2)
    if a.shape != b.shape:
        raise ValueError("image_ssim: shapes differ")
    if min(a.shape) < window:
        raise ValueError("image_ssim: image smaller than the window")
    wa = np.lib.stride_tricks.sliding_window_view(a, (window, window))
    wb = np.lib.stride_tricks.sliding_window_view(b, (window, window))
    flat_a = wa.reshape(-1, window * window)
    flat_b = wb.reshape(-1, window * window)
    values = patch_ssim(Tape(), flat_a, flat_b).value
    return float(values.mean())


def evaluate_render(rendered_color: np.ndarray, rendered_depth: np.ndarray,
                    acc: np.ndarray, gt_color: np.ndarray,
                    gt_depth: np.ndarray | None,
                    acc_threshold: float = ACC_MASK_THRESHOLD) -> MetricReport:
    """Per-view render metrics.

    Depth L1 is evaluated only where the ray is opaque enough (sum of weights
    at least ``acc_threshold``) and the ground truth is valid; an empty mask
    reports the depth metric as absent.
    """
    report = MetricReport(
        psnr_db=psnr(rendered_color, gt_color),
        ssim=image_ssim(rendered_color, gt_color),
    )
    if gt_depth is not None:
        mask = (np.asarray(acc) >= acc_threshold) & (np.asarray(gt_depth) > 0) \
            & np.isfinite(gt_depth)
        if mask.any():
            diff = np.abs(np.asarray(rendered_depth)[mask] - np.asarray(gt_depth)[mask])
            report.depth_l1_cm = float(diff.mean() * 100.0)
    return report


def sample_mesh_points(mesh: Mesh, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform-by-area surface samples."""
    if mesh.is_empty:
        raise DataError("cannot sample an empty mesh")
    areas = mesh.triangle_areas()
    total = areas.sum()
    if total <= 0:
        raise DataError("mesh has zero surface area")
    tri = rng.choice(len(areas), size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    fold = u + v > 1.0
    u[fold] = 1.0 - u[fold]
    v[fold] = 1.0 - v[fold]
    a = mesh.vertices[mesh.faces[tri, 0]]
    b = mesh.vertices[mesh.faces[tri, 1]]
    c = mesh.vertices[mesh.faces[tri, 2]]
    return a + u[:, None] * (b - a) + v[:, None] * (c - a)


def evaluate_mesh(recon: Mesh, gt: Mesh, n_samples: int = MESH_SAMPLES,
                  threshold: float = COMP_THRESHOLD_M, seed: int = 0
                  ) -> tuple[float, float, float]:
    """Point-to-point mesh metrics: (Acc cm, Comp cm, Comp Ratio %).

    Each mesh is sampled with its own generator seeded identically, so
    swapping the meshes swaps Acc and Comp exactly.
    """
    if recon.is_empty or gt.is_empty:
        raise DataError("evaluate_mesh: both meshes must be non-empty")
    pts_recon = sample_mesh_points(recon, n_samples, np.random.default_rng(seed))
    pts_gt = sample_mesh_points(gt, n_samples, np.random.default_rng(seed))
    d_recon_to_gt = cKDTree(pts_gt).query(pts_recon)[0]
    d_gt_to_recon = cKDTree(pts_recon).query(pts_gt)[0]
    acc_cm = float(d_recon_to_gt.mean() * 100.0)
    comp_cm = float(d_gt_to_recon.mean() * 100.0)
    ratio = float((d_gt_to_recon < threshold).mean() * 100.0)
    return acc_cm, comp_cm, ratio


REPORT_KEYS = ("psnr_db", "ssim", "depth_l1_cm", "acc_cm", "comp_cm",
               "comp_ratio_pct")


def format_report(report: MetricReport, per_frame: list[dict] | None = None) -> str:
    """Key: value block plus an optional per-frame table; stable formatting."""
    lines = []
    for key in REPORT_KEYS:
        value = report.as_dict()[key]
        lines.append(f"{key}: {'absent' if value is None else f'{value:.6f}'}")
    if per_frame:
        lines.append("")
        lines.append("frame  psnr_db  ssim  depth_l1_cm")
        for row in per_frame:
            depth = row.get("depth_l1_cm")
            lines.append("{:>5d}  {:>7.3f}  {:>5.4f}  {}".format(
                row["frame_id"], row["psnr_db"], row["ssim"],
                "absent" if depth is None else f"{depth:.4f}"))
    return "\n".join(lines) + "\n"


def write_report(path, report: MetricReport,
                 per_frame: list[dict] | None = None) -> None:
    Path(path).write_text(format_report(report, per_frame))

"""Training losses: photometric rendering loss, single-window SSIM, and the
multi-scale patch-warping consistency loss driven by rendered depth.

Warping backprojects each patch pixel with its rendered depth, reprojects
into a target frame, and bilinearly samples the target image there; since the
images are constants, only the interpolation weights carry gradients, which is
exactly the path that couples the loss to depth.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var

log = logging.getLogger(__name__)

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
DEFAULT_PATCH_SIZE = 7
DEFAULT_PYRAMID_LEVELS = 3
DEFAULT_MIN_VALID_PX = 10


@dataclass
class LossTerms:
    """Snapshot of one iteration's loss values (plain floats)."""

    l_color: float
    l_warp: float
    total: float
    alpha_c: float
    alpha_w: float
    warp_patches: int = 0


def photometric_loss(tape: Tape, rendered, observed) -> Var:
    """Mean over pixels of the RGB L1 difference (summed over channels)."""
    obs = np.asarray(observed, dtype=np.float64)
    if obs.size == 0:
        raise ValueError("photometric_loss: empty pixel set")
    per_pixel = ad.reduce_sum(ad.absolute(rendered - obs), axis=1)
    return ad.reduce_sum(per_pixel) * (1.0 / obs.shape[0])


def total_loss(tape: Tape, l_color, l_warp, alpha_c: float, alpha_w: float):
    if alpha_c < 0 or alpha_w < 0:
        raise ValueError("loss weights must be non-negative")
    return l_color * alpha_c + l_warp * alpha_w


def ssim(tape: Tape, patch_a, patch_b, c1: float = SSIM_C1,
         c2: float = SSIM_C2) -> Var:
    """Single-window SSIM over the last axis of two equally shaped patches."""
    av, bv = ad._val(patch_a), ad._val(patch_b)
    if av.shape != bv.shape:
        raise ValueError(f"ssim: patch shapes differ: {av.shape} vs {bv.shape}")
    if av.shape[-1] < 4:
        raise ValueError("ssim: patch must contain at least 2x2 pixels")
    n = av.shape[-1]
    a = patch_a if isinstance(patch_a, Var) else tape.constant(av)
    b = patch_b if isinstance(patch_b, Var) else tape.constant(bv)
    mu_a = ad.reduce_sum(a, axis=-1) * (1.0 / n)
    mu_b = ad.reduce_sum(b, axis=-1) * (1.0 / n)
    var_a = ad.reduce_sum(a * a, axis=-1) * (1.0 / n) - mu_a * mu_a
    var_b = ad.reduce_sum(b * b, axis=-1) * (1.0 / n) - mu_b * mu_b
    cov = ad.reduce_sum(a * b, axis=-1) * (1.0 / n) - mu_a * mu_b
    num = (mu_a * mu_b * 2.0 + c1) * (cov * 2.0 + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim_masked(tape: Tape, patch_a, patch_b, mask: np.ndarray,
                min_valid: int = 4, c1: float = SSIM_C1,
                c2: float = SSIM_C2) -> tuple[Var, np.ndarray]:
    """SSIM over the valid pixels of each patch row.

    ``mask`` is a constant 0/1 array; rows with fewer than ``min_valid``
    pixels are reported invalid (their value is meaningless but finite).
    Returns (ssim per row, row validity).
    """
    mask = np.asarray(mask, dtype=np.float64)
    count = mask.sum(axis=-1)
    row_valid = count >= min_valid
    n_safe = np.maximum(count, 1.0)
    inv_n = 1.0 / n_safe
    a = patch_a if isinstance(patch_a, Var) else tape.constant(ad._val(patch_a))
    b = patch_b if isinstance(patch_b, Var) else tape.constant(ad._val(patch_b))
    am = a * mask
    bm = b * mask
    mu_a = ad.reduce_sum(am, axis=-1) * inv_n
    mu_b = ad.reduce_sum(bm, axis=-1) * inv_n
    var_a = ad.reduce_sum(am * am, axis=-1) * inv_n - mu_a * mu_a
    var_b = ad.reduce_sum(bm * bm, axis=-1) * inv_n - mu_b * mu_b
    cov = ad.reduce_sum(am * bm, axis=-1) * inv_n - mu_a * mu_b
    num = (mu_a * mu_b * 2.0 + c1) * (cov * 2.0 + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den, row_valid


# -------------------------------------------------------------- pyramids

def gray_from_rgb(image: np.ndarray) -> np.ndarray:
    return np.asarray(image, dtype=np.float64).mean(axis=2)


def build_pyramid(gray: np.ndarray, levels: int = DEFAULT_PYRAMID_LEVELS
                  ) -> list[np.ndarray]:
    """Box-filter image pyramid: full, 1/2, 1/4, ... resolution."""
    out = [np.asarray(gray, dtype=np.float64)]
    for _ in range(levels - 1):
        prev = out[-1]
        h, w = prev.shape[0] // 2 * 2, prev.shape[1] // 2 * 2
        trimmed = prev[:h, :w]
        out.append(0.25 * (trimmed[0::2, 0::2] + trimmed[1::2, 0::2]
                           + trimmed[0::2, 1::2] + trimmed[1::2, 1::2]))
    return out


def _bilinear_setup(u: np.ndarray, v: np.ndarray, w: int, h: int):
    """Corner indices, fractions, and validity for sampling at (u, v).

    Pixel (i, j) holds the image value at continuous point (i+0.5, j+0.5);
    coordinates within half a pixel of the border cannot be interpolated.
    """
    x = u - 0.5
    y = v - 0.5
    ix = np.clip(np.floor(x).astype(np.int64), 0, w - 2)
    iy = np.clip(np.floor(y).astype(np.int64), 0, h - 2)
    valid = (u >= 0.5) & (u <= w - 0.5) & (v >= 0.5) & (v <= h - 0.5)
    return ix, iy, x, y, valid


def bilinear_const(image: np.ndarray, u: np.ndarray, v: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Plain-numpy bilinear sampling of a constant image; returns (values,
    validity). Supports (H, W) and (H, W, C) images."""
    h, w = image.shape[:2]
    ix, iy, x, y, valid = _bilinear_setup(np.asarray(u, float), np.asarray(v, float), w, h)
    fx = x - ix
    fy = y - iy
    if image.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    c00 = image[iy, ix]
    c01 = image[iy, ix + 1]
    c10 = image[iy + 1, ix]
    c11 = image[iy + 1, ix + 1]
    val = (c00 * (1 - fy) * (1 - fx) + c01 * (1 - fy) * fx
           + c10 * fy * (1 - fx) + c11 * fy * fx)
    return val, valid


def bilinear_var(tape: Tape, stack: np.ndarray, rows: np.ndarray, u: Var,
                 v: Var) -> tuple[Var, np.ndarray]:
    """Bilinear sampling of constant images at differentiable coordinates.

    ``stack`` is (F, H, W); ``rows`` selects the image per sample. Corner
    values are constants, so only the fractional weights carry gradient.
    """
    f, h, w = stack.shape
    ix, iy, _, _, valid = _bilinear_setup(u.value, v.value, w, h)
    fx = u - (ix + 0.5)
    fy = v - (iy + 0.5)
    rows_b = np.broadcast_to(rows, ix.shape) if np.ndim(rows) < ix.ndim else rows
    c00 = stack[rows_b, iy, ix]
    c01 = stack[rows_b, iy, ix + 1]
    c10 = stack[rows_b, iy + 1, ix]
    c11 = stack[rows_b, iy + 1, ix + 1]
    one_m_fx = 1.0 - fx
    one_m_fy = 1.0 - fy
    val = (one_m_fy * one_m_fx * c00 + one_m_fy * fx * c01
           + fy * one_m_fx * c10 + fy * fx * c11)
    return val, valid


# -------------------------------------------------------------- warping

def warp_components(tape: Tape, origins: np.ndarray, dirs: np.ndarray,
                    depths: Var, rot: np.ndarray, trans: np.ndarray,
                    fx: float, fy: float, cx: float, cy: float
                    ) -> tuple[Var, Var, np.ndarray]:
    """Backproject pixels with their depths and project into a target camera.

    ``origins``/``dirs`` are (..., 3) constants, ``depths`` (...) is a Var;
    ``rot``/``trans`` are the target world-from-camera pose, possibly batched
    over leading axes as (..., 3, 3) / (..., 3). Returns differentiable target
    pixel coordinates (u, v) and a constant cheirality mask.
    """
    world = [origins[..., j] + dirs[..., j] * depths for j in range(3)]
    rot = np.asarray(rot, dtype=np.float64)
    trans = np.asarray(trans, dtype=np.float64)
    if rot.ndim == 2:
        r = [[rot[j, i] for i in range(3)] for j in range(3)]
        t = [trans[j] for j in range(3)]
    else:
        r = [[rot[..., None, j, i] for i in range(3)] for j in range(3)]
        t = [trans[..., None, j] for j in range(3)]
    cam = []
    for i in range(3):
        acc = None
        for j in range(3):
            term = (world[j] - t[j]) * r[j][i]
            acc = term if acc is None else acc + term
        cam.append(acc)
    in_front = cam[2].value > 1e-6
    z_safe = ad.clip(cam[2], lo=1e-6)
    u = (cam[0] / z_safe) * fx + cx
    v = (cam[1] / z_safe) * fy + cy
    return u, v, in_front


def warp_patch(tape: Tape, pixels: np.ndarray, origins: np.ndarray,
               dirs: np.ndarray, depths, target_pose, intrinsics,
               target_image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Warp one patch into a target frame and sample its image there.

    Forward-only convenience used by tests and diagnostics; returns the
    warped patch values and a per-pixel validity mask. ``pixels`` is unused
    geometry-wise (rays already carry it) but kept for shape checking.
    """
    depths_v = np.asarray(ad._val(depths), dtype=np.float64)
    if np.any(depths_v[np.isfinite(depths_v)] < 0):
        raise ValueError("warp_patch: negative depth")
    d_var = depths if isinstance(depths, Var) else tape.constant(depths_v)
    u, v, in_front = warp_components(
        tape, origins, dirs, d_var, target_pose.rotation, target_pose.translation,
        intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy)
    value, in_bounds = bilinear_const(target_image, u.value, v.value)
    return value, in_front & in_bounds


def warping_loss(tape: Tape, coords: np.ndarray, origins: np.ndarray,
                 dirs: np.ndarray, depths: Var, depth_valid: np.ndarray,
                 pair_patch: np.ndarray, pair_src: np.ndarray,
                 pair_tgt: np.ndarray, poses_r: np.ndarray, poses_t: np.ndarray,
                 intrinsics, pyramids: list[np.ndarray],
                 min_valid_px: int = DEFAULT_MIN_VALID_PX) -> tuple[Var, int]:
    """Multi-scale warping loss over (patch, target-frame) pairs.

    ``coords`` (B, K, 2), ``origins``/``dirs`` (B, K, 3) and ``depths`` (B, K)
    describe the rendered source patches; ``pair_*`` index patches and window
    rows. ``pyramids`` is one (F, Hs, Ws) stack per scale. Returns the loss
    (mean of 1 - SSIM over valid pairs and scales) and the valid-pair count.
    """
    if len(pair_patch) == 0:
        return tape.constant(np.array(0.0)), 0
    o = origins[pair_patch]
    d = dirs[pair_patch]
    z = ad.gather(depths, pair_patch)
    rot = poses_r[pair_tgt]
    trans = poses_t[pair_tgt]
    u, v, in_front = warp_components(tape, o, d, z, rot, trans,
                                     intrinsics.fx, intrinsics.fy,
                                     intrinsics.cx, intrinsics.cy)
    base_valid = in_front & depth_valid[pair_patch]
    src_u = coords[pair_patch][..., 0]
    src_v = coords[pair_patch][..., 1]

    total = None
    valid_pairs = 0
    for level, stack in enumerate(pyramids):
        scale = 1.0 / (2 ** level)
        warped, tgt_ok = bilinear_var(tape, stack, pair_tgt[:, None],
                                      u * scale, v * scale)
        src_vals, src_ok = _sample_rows(stack, pair_src, src_u * scale,
                                        src_v * scale)
        mask = (base_valid & tgt_ok & src_ok).astype(np.float64)
        sim, row_ok = ssim_masked(tape, src_vals, warped, mask,
                                  min_valid=min_valid_px)
        contrib = ad.reduce_sum((1.0 - sim) * row_ok.astype(np.float64))
        total = contrib if total is None else total + contrib
        valid_pairs += int(row_ok.sum())
    if valid_pairs == 0:
        log.warning("warping loss: no valid patch/frame/scale triples")
        return tape.constant(np.array(0.0)), 0
    return total * (1.0 / valid_pairs), valid_pairs


def _sample_rows(stack: np.ndarray, rows: np.ndarray, u: np.ndarray,
                 v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Constant bilinear sampling out of a (F, H, W) stack, row per patch."""
    f, h, w = stack.shape
    ix, iy, x, y, valid = _bilinear_setup(u, v, w, h)
    fx = x - ix
    fy = y - iy
    rows_b = np.broadcast_to(rows[:, None], ix.shape)
    c00 = stack[rows_b, iy, ix]
    c01 = stack[rows_b, iy, ix + 1]
    c10 = stack[rows_b, iy + 1, ix]
    c11 = stack[rows_b, iy + 1, ix + 1]
    val = (c00 * (1 - fy) * (1 - fx) + c01 * (1 - fy) * fx
           + c10 * fy * (1 - fx) + c11 * fy * fx)
    return val, valid

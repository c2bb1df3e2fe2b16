"""Online mapping: the initialization phase, per-update optimization with the
sliding window, the keyframe cache, and overlap-based global frame sampling.

One optimization iteration samples patch centers across the window, renders
every patch pixel, applies the photometric loss to all rendered pixels and the
multi-scale warping loss to the patches, then takes one Adam step.
"""

from __future__ import annotations

import ctypes
import json
import logging
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

try:
    _libc = ctypes.CDLL("libc.so.6")
    _libc.malloc_trim(0)
except (OSError, AttributeError):  # non-glibc platform
    _libc = None


def _release_heap() -> None:
    """Hand freed allocator pages back to the OS; long runs churn through
    hundreds of MB of tape buffers per iteration and glibc fragments badly
    without this."""
    if _libc is not None:
        _libc.malloc_trim(0)

from . import autodiff as ad
from .autodiff import Tape
from .errors import NumericsError
from .losses import (LossTerms, build_pyramid, gray_from_rgb, photometric_loss,
                     total_loss, warping_loss)
from .model import SceneModel
from .renderer import (ACC_VALID_THRESHOLD, CameraIntrinsics, Pose,
                       generate_rays, ray_box_range, render_batch,
                       render_pixels, stratified_samples)

log = logging.getLogger(__name__)


@dataclass
class Frame:
    """One posed RGB observation."""

    frame_id: int
    image: np.ndarray  # (H, W, 3) in [0, 1]
    pose: Pose
    intrinsics: CameraIntrinsics
    timestamp: float = 0.0

    def __post_init__(self):
        h, w = self.image.shape[:2]
        if (h, w) != (self.intrinsics.height, self.intrinsics.width):
            raise ValueError(
                f"frame {self.frame_id}: image is {w}x{h} but intrinsics say "
                f"{self.intrinsics.width}x{self.intrinsics.height}")


@dataclass
class Schedule:
    """Iteration counts and window capacities for online mapping."""

    init_window: int = 15        # frames used by the initialization phase
    init_iters: int = 1500
    color_iters: int = 250       # photometric term active for this many init iters
    online_iters: int = 20
    frames_per_update: int = 5
    rays_per_iter: int = 2048
    window_local: int = 15
    window_global: int = 5
    overlap_probes: int = 256
    warp_overlap_probes: int = 64
    overlap_refresh: int = 100

    def __post_init__(self):
        for name in ("init_window", "init_iters", "online_iters",
                     "frames_per_update", "rays_per_iter", "window_local",
                     "window_global", "overlap_probes", "warp_overlap_probes",
                     "overlap_refresh"):
            if getattr(self, name) < 1:
                raise ValueError(f"schedule field {name} must be positive")
        if self.color_iters > self.init_iters:
            raise ValueError("color_iters cannot exceed init_iters")


@dataclass
class RenderSettings:
    samples_per_ray: int = 96
    near_min: float = 0.01
    mode: str = "sdf_density"
    sdf_trunc: float = 0.05


@dataclass
class LossSettings:
    alpha_c_init: float = 0.1
    alpha_c_online: float = 0.001
    alpha_w: float = 1.0
    patch_size: int = 7
    pyramid_levels: int = 3
    min_overlap: float = 0.3
    min_valid_px: int = 10


class SlidingWindow:
    """Consecutive local frames plus overlap-sampled global keyframes."""

    def __init__(self) -> None:
        self.local: list[Frame] = []
        self.global_frames: list[Frame] = []

    def frames(self) -> list[Frame]:
        return self.local + self.global_frames

    def ids(self) -> list[int]:
        return [f.frame_id for f in self.frames()]

    def check(self, window_local: int, window_global: int) -> None:
        if len(self.local) > window_local:
            raise AssertionError("local window over capacity")
        if len(self.global_frames) > window_global:
            raise AssertionError("global window over capacity")
        ids = self.ids()
        if len(set(ids)) != len(ids):
            raise AssertionError("duplicate frame in window")
        local_ids = [f.frame_id for f in self.local]
        if local_ids != sorted(local_ids):
            raise AssertionError("local frames out of order")


class KeyframeCache:
    """Retired frames eligible as global keyframes; append-only."""

    def __init__(self) -> None:
        self.frames: list[Frame] = []

    def add(self, frame: Frame) -> None:
        self.frames.append(frame)

    def ids(self) -> set[int]:
        return {f.frame_id for f in self.frames}

    def __len__(self) -> int:
        return len(self.frames)


def retire_frames(window: SlidingWindow, cache: KeyframeCache, n: int
                  ) -> tuple[list[Frame], Frame | None]:
    """Remove the n oldest local frames; the single earliest of them joins the
    keyframe cache, the other n-1 are discarded. An underfull window retires
    as many frames as exist."""
    n = min(n, len(window.local))
    if n <= 0:
        return [], None
    removed = window.local[:n]
    window.local = window.local[n:]
    kept = removed[0]
    cache.add(kept)
    return removed[1:], kept


class Mapper:
    """Drives online optimization of a SceneModel over a frame stream."""

    def __init__(self, model: SceneModel, schedule: Schedule | None = None,
                 render: RenderSettings | None = None,
                 loss: LossSettings | None = None, seed: int = 0,
                 log_path=None, eval_hook=None) -> None:
        self.model = model
        self.schedule = schedule or Schedule()
        self.render = render or RenderSettings()
        self.loss = loss or LossSettings()
        self.rng = np.random.default_rng(seed)
        self.window = SlidingWindow()
        self.cache = KeyframeCache()
        self.adam_t = 0
        self.update_index = 0
        self.records: list[dict] = []
        self.log_path = Path(log_path) if log_path else None
        self.eval_hook = eval_hook
        self._pyramid_cache: dict[int, list[np.ndarray]] = {}
        self._rows: list[Frame] = []
        self._targets: dict[int, list[int]] = {}
        self._warned_no_pairs = False

    # ------------------------------------------------------------ phases

    def initialize(self, frames: list[Frame]) -> dict:
        """Initialization phase: optimize over the first init_window frames.

        The photometric term participates only for the first color_iters
        iterations; the warping term drives geometry throughout.
        """
        sched = self.schedule
        if len(frames) < sched.init_window:
            raise ValueError(
                f"initialization needs {sched.init_window} frames, got {len(frames)}")
        self.window.local = list(frames[:sched.init_window])
        self._assemble()
        terms = []
        for it in range(1, sched.init_iters + 1):
            alpha_c = self.loss.alpha_c_init if it <= sched.color_iters else 0.0
            terms.append(self._iteration(alpha_c, self.loss.alpha_w))
            if it % sched.overlap_refresh == 0 and it < sched.init_iters:
                self._refresh_targets()
        return self._log_update("init", terms)

    def step(self, new_frames: list[Frame]) -> dict:
        """One map update upon n newly received frames."""
        sched = self.schedule
        n = sched.frames_per_update
        if len(new_frames) != n:
            raise ValueError(f"step expects exactly {n} new frames")
        ids = [f.frame_id for f in new_frames]
        last = self.window.local[-1].frame_id if self.window.local else -1
        if any(b <= a for a, b in zip([last] + ids[:-1], ids)):
            raise ValueError(f"frame ids must be strictly increasing, got {ids}")
        self.window.local.extend(new_frames)
        overflow = len(self.window.local) - sched.window_local
        if overflow > 0:
            retire_frames(self.window, self.cache, overflow)
        current = self.window.local[-1]
        self.window.global_frames = self.sample_global_keyframes(current)
        self.window.check(sched.window_local, sched.window_global)
        self._assemble()
        terms = []
        for it in range(1, sched.online_iters + 1):
            terms.append(self._iteration(self.loss.alpha_c_online, self.loss.alpha_w))
            if it % sched.overlap_refresh == 0 and it < sched.online_iters:
                self._refresh_targets()
        return self._log_update("online", terms)

    def run(self, frames: list[Frame]) -> list[dict]:
        """Initialize then step through the remaining frames in n-chunks."""
        sched = self.schedule
        records = [self.initialize(frames)]
        n = sched.frames_per_update
        rest = frames[sched.init_window:]
        for start in range(0, len(rest) - len(rest) % n, n):
            records.append(self.step(rest[start:start + n]))
        return records

    # ------------------------------------------------------------ window

    def estimate_overlap(self, frame_a: Frame, frame_b: Frame,
                         probes: int | None = None,
                         rng: np.random.Generator | None = None) -> float:
        """Fraction of frame_a's rendered surface visible from frame_b.

        Probes pixels in a, backprojects them with the rendered depth, and
        reprojects into b; pixels with insufficient opacity are excluded from
        the denominator.
        """
        rng = self.rng if rng is None else rng
        k = probes or self.schedule.overlap_probes
        intr = frame_a.intrinsics
        pixels = np.stack([rng.integers(0, intr.width, k) + 0.5,
                           rng.integers(0, intr.height, k) + 0.5], axis=1)
        out = render_pixels(self.model, intr, frame_a.pose, pixels,
                            self.render.samples_per_ray, rng,
                            mode=self.render.mode, near_min=self.render.near_min,
                            trunc=self.render.sdf_trunc)
        valid = out["acc"] >= ACC_VALID_THRESHOLD
        if not valid.any():
            return 0.0
        origins, dirs = generate_rays(intr, frame_a.pose, pixels)
        points = origins[valid] + dirs[valid] * out["depth"][valid][:, None]
        return self._visible_fraction(points, frame_b)

    @staticmethod
    def _visible_fraction(points: np.ndarray, frame: Frame) -> float:
        cam = (points - frame.pose.translation) @ frame.pose.rotation
        z = cam[:, 2]
        front = z > 1e-6
        with np.errstate(divide="ignore", invalid="ignore"):
            u = frame.intrinsics.fx * cam[:, 0] / z + frame.intrinsics.cx
            v = frame.intrinsics.fy * cam[:, 1] / z + frame.intrinsics.cy
        inside = front & (u >= 0) & (u <= frame.intrinsics.width) \
            & (v >= 0) & (v <= frame.intrinsics.height)
        return float(inside.mean())

    def sample_global_keyframes(self, current: Frame,
                                rng: np.random.Generator | None = None
                                ) -> list[Frame]:
        """Draw global keyframes from the cache, probability proportional to
        their overlap with the current observation, without replacement."""
        rng = self.rng if rng is None else rng
        count = self.schedule.window_global
        candidates = []
        for f in self.cache.frames:
            ov = self.estimate_overlap(f, current, rng=rng)
            if ov > 0.0:
                candidates.append((f, ov))
        if len(candidates) <= count:
            return [f for f, _ in candidates]
        frames = [f for f, _ in candidates]
        weights = np.array([ov for _, ov in candidates], dtype=np.float64)
        chosen: list[Frame] = []
        available = list(range(len(frames)))
        for _ in range(count):
            w = weights[available]
            pick = rng.choice(len(available), p=w / w.sum())
            chosen.append(frames[available[pick]])
            available.pop(pick)
        return chosen

    # ------------------------------------------------------------ internals

    def _assemble(self) -> None:
        """Rebuild per-update caches: row arrays, pyramids, warp targets."""
        self._rows = self.window.frames()
        self._poses_r = np.stack([f.pose.rotation for f in self._rows])
        self._poses_t = np.stack([f.pose.translation for f in self._rows])
        self._image_stack = np.stack([f.image for f in self._rows])
        stacks: list[list[np.ndarray]] = [[] for _ in range(self.loss.pyramid_levels)]
        for f in self._rows:
            pyr = self._pyramid_cache.get(f.frame_id)
            if pyr is None:
                pyr = build_pyramid(gray_from_rgb(f.image), self.loss.pyramid_levels)
                self._pyramid_cache[f.frame_id] = pyr
            for lvl in range(self.loss.pyramid_levels):
                stacks[lvl].append(pyr[lvl])
        self._pyramid_stacks = [np.stack(s) for s in stacks]
        live = {f.frame_id for f in self._rows}
        self._pyramid_cache = {k: v for k, v in self._pyramid_cache.items()
                               if k in live}
        self._refresh_targets()

    def _refresh_targets(self) -> None:
        """Probe-based pairwise view overlap; gates warp target frames."""
        rows = self._rows
        n = len(rows)
        k = self.schedule.warp_overlap_probes
        clouds: list[np.ndarray | None] = []
        for f in rows:
            intr = f.intrinsics
            pixels = np.stack([self.rng.integers(0, intr.width, k) + 0.5,
                               self.rng.integers(0, intr.height, k) + 0.5], axis=1)
            out = render_pixels(self.model, intr, f.pose, pixels,
                                self.render.samples_per_ray, self.rng,
                                mode=self.render.mode,
                                near_min=self.render.near_min,
                                trunc=self.render.sdf_trunc)
            valid = out["acc"] >= ACC_VALID_THRESHOLD
            if not valid.any():
                clouds.append(None)
                continue
            origins, dirs = generate_rays(intr, f.pose, pixels)
            clouds.append(origins[valid] + dirs[valid] * out["depth"][valid][:, None])
        targets: dict[int, list[int]] = {}
        for a in range(n):
            targets[a] = []
            if clouds[a] is None:
                continue
            for b in range(n):
                if b == a:
                    continue
                if self._visible_fraction(clouds[a], rows[b]) > self.loss.min_overlap:
                    targets[a].append(b)
        if n > 1 and not any(targets.values()):
            # cold start: the rendered depth is still fog, so the overlap
            # estimates are meaningless; warp against everything until the
            # next refresh can gate properly
            log.info("overlap gate found no targets; using all window frames")
            targets = {a: [b for b in range(n) if b != a] for a in range(n)}
        self._targets = targets

    def _iteration(self, alpha_c: float, alpha_w: float) -> LossTerms:
        sched, rs, ls = self.schedule, self.render, self.loss
        k_patch = ls.patch_size ** 2
        radius = ls.patch_size // 2
        n_patches = max(1, sched.rays_per_iter // k_patch)
        n_rows = len(self._rows)
        intr = self._rows[0].intrinsics

        src_rows = self.rng.integers(0, n_rows, size=n_patches)
        cu = self.rng.integers(radius, intr.width - radius, size=n_patches)
        cv = self.rng.integers(radius, intr.height - radius, size=n_patches)
        offs = np.arange(-radius, radius + 1)
        du, dv = np.meshgrid(offs, offs)
        px = cu[:, None] + du.ravel()[None, :]
        py = cv[:, None] + dv.ravel()[None, :]
        coords = np.stack([px + 0.5, py + 0.5], axis=2)  # (B, K, 2)

        d_cam = np.stack([(coords[..., 0] - intr.cx) / intr.fx,
                          (coords[..., 1] - intr.cy) / intr.fy,
                          np.ones_like(coords[..., 0])], axis=2)
        dirs = np.einsum("bij,bkj->bki", self._poses_r[src_rows], d_cam)
        dirs /= np.linalg.norm(dirs, axis=2, keepdims=True)
        origins = np.broadcast_to(self._poses_t[src_rows][:, None, :],
                                  dirs.shape).copy()

        o_flat = origins.reshape(-1, 3)
        d_flat = dirs.reshape(-1, 3)
        near, far, hit = ray_box_range(self.model.bounds, o_flat, d_flat,
                                       rs.near_min)
        near = np.where(hit, near, rs.near_min)
        far = np.where(hit, far, rs.near_min * 2.0)
        batch = stratified_samples(o_flat, d_flat, near, far,
                                   rs.samples_per_ray, self.rng)

        tape = Tape()
        res = render_batch(tape, self.model, batch, mode=rs.mode,
                           trunc=rs.sdf_trunc)

        observed = self._image_stack[
            np.repeat(src_rows, k_patch), py.ravel(), px.ravel()]
        if hit.all():
            l_color = photometric_loss(tape, res.color, observed)
        else:
            keep = np.flatnonzero(hit)
            l_color = photometric_loss(tape, ad.gather(res.color, keep),
                                       observed[keep])

        n_pairs = 0
        if alpha_w > 0.0:
            pair_patch, pair_src, pair_tgt = self._warp_pairs(src_rows)
            if len(pair_patch):
                depth = ad.reshape(res.depth, (n_patches, k_patch))
                depth_valid = (res.acc.value >= ACC_VALID_THRESHOLD).reshape(
                    n_patches, k_patch) & hit.reshape(n_patches, k_patch)
                l_warp, n_pairs = warping_loss(
                    tape, coords, origins, dirs, depth, depth_valid,
                    pair_patch, pair_src, pair_tgt, self._poses_r,
                    self._poses_t, intr, self._pyramid_stacks,
                    min_valid_px=ls.min_valid_px)
            else:
                if not self._warned_no_pairs and n_rows > 1:
                    log.warning("warping loss inactive: no overlapping targets")
                    self._warned_no_pairs = True
                l_warp = tape.constant(np.array(0.0))
        else:
            l_warp = tape.constant(np.array(0.0))

        total = total_loss(tape, l_color, l_warp, alpha_c, alpha_w)
        value = float(total.value)
        if not math.isfinite(value):
            raise NumericsError(f"non-finite loss at adam step {self.adam_t + 1}")

        self.model.store.zero_grad()
        tape.backward(total)
        self.adam_t += 1
        self.model.store.adam_step(self.adam_t)
        terms = LossTerms(l_color=float(l_color.value), l_warp=float(l_warp.value),
                          total=value, alpha_c=alpha_c, alpha_w=alpha_w,
                          warp_patches=n_pairs)
        tape.release()
        _release_heap()
        return terms

    def _warp_pairs(self, src_rows: np.ndarray):
        pair_patch, pair_src, pair_tgt = [], [], []
        for b, src in enumerate(src_rows):
            for tgt in self._targets.get(int(src), []):
                pair_patch.append(b)
                pair_src.append(int(src))
                pair_tgt.append(tgt)
        return (np.array(pair_patch, dtype=np.int64),
                np.array(pair_src, dtype=np.int64),
                np.array(pair_tgt, dtype=np.int64))

    def _log_update(self, phase: str, terms: list[LossTerms]) -> dict:
        record = {
            "update": self.update_index,
            "phase": phase,
            "adam_t": self.adam_t,
            "local": [f.frame_id for f in self.window.local],
            "global": [f.frame_id for f in self.window.global_frames],
            "cache_size": len(self.cache),
            "l_color": float(np.mean([t.l_color for t in terms])),
            "l_warp": float(np.mean([t.l_warp for t in terms])),
            "l_total": float(np.mean([t.total for t in terms])),
        }
        if self.eval_hook is not None:
            record.update(self.eval_hook(self))
        self.records.append(record)
        if self.log_path is not None:
            with open(self.log_path, "a") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")
        self.update_index += 1
        return record

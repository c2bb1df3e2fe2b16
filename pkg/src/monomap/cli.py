"""Command-line surface: dataset synthesis, mapping runs, evaluation,
rendering from checkpoints, and paired ablation runs.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import (RunConfig, build_model_from_config, config_from_dict,
                     load_config, save_config)
from .datasets import Dataset, load_dataset, ray_to_z_factor, save_dataset
from .errors import ConfigError, DataError, NumericsError
from .mapper import Mapper
from .meshing import extract_mesh, write_ply
from .metrics import (MetricReport, evaluate_mesh, evaluate_render,
                      format_report, write_report)
from .renderer import CameraIntrinsics, Pose, render_view
from .synthetic import (OrbitTrajectory, default_intrinsics, desk_scene,
                        generate_synthetic, textureless_scene)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

SCENES = {"desk": desk_scene, "textureless": textureless_scene}


def _write_png(path, image) -> None:
    from PIL import Image
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def _depth_png(path, depth) -> None:
    from PIL import Image
    mm = np.clip(np.round(np.asarray(depth) * 1000.0), 0, 65535).astype(np.uint16)
    Image.fromarray(mm).save(path)


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "threads", None) is not None:
        cfg.threads = args.threads
    sched = cfg.schedule
    if getattr(args, "iters_init", None) is not None:
        sched.init_iters = args.iters_init
        sched.color_iters = min(sched.color_iters, sched.init_iters)
    if getattr(args, "iters_online", None) is not None:
        sched.online_iters = args.iters_online
    if getattr(args, "window", None) is not None:
        sched.window_local = args.window
    if getattr(args, "rays", None) is not None:
        sched.rays_per_iter = args.rays
    # revalidate after overrides
    from .mapper import Schedule
    try:
        cfg.schedule = Schedule(**asdict(sched))
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return cfg


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return _apply_overrides(cfg, args)


def _eval_model(model, dataset: Dataset, cfg: RunConfig, out_dir: Path | None,
                write_images: bool = False):
    """Render metrics over a spread of dataset frames plus mesh metrics."""
    frames = dataset.frames
    count = min(cfg.eval.final_eval_frames, len(frames))
    idx = np.unique(np.linspace(0, len(frames) - 1, count).astype(int))
    per_frame = []
    rng = np.random.default_rng(cfg.seed + 7777)
    renders = {}
    for i in idx:
        f = frames[i]
        out = render_view(model, f.intrinsics, f.pose, cfg.render.samples_per_ray,
                          rng, mode=cfg.render.mode,
                          near_min=cfg.render.near_min, trunc=cfg.render.sdf_trunc)
        z = out["depth"] * ray_to_z_factor(f.intrinsics)
        gt_depth = dataset.gt_depths.get(f.frame_id)
        rep = evaluate_render(out["color"], z, out["acc"], f.image, gt_depth)
        per_frame.append({"frame_id": f.frame_id, "psnr_db": rep.psnr_db,
                          "ssim": rep.ssim, "depth_l1_cm": rep.depth_l1_cm})
        renders[f.frame_id] = out
        if write_images and out_dir is not None:
            _write_png(out_dir / f"render_{f.frame_id:06d}.png", out["color"])
            _depth_png(out_dir / f"depth_{f.frame_id:06d}.png", z)
    report = MetricReport(
        psnr_db=float(np.mean([r["psnr_db"] for r in per_frame])),
        ssim=float(np.mean([r["ssim"] for r in per_frame])),
    )
    depth_vals = [r["depth_l1_cm"] for r in per_frame if r["depth_l1_cm"] is not None]
    if depth_vals:
        report.depth_l1_cm = float(np.mean(depth_vals))
    mesh = extract_mesh(model, cfg.eval.mesh_cell, with_colors=True)
    if dataset.gt_mesh is not None and not mesh.is_empty:
        acc, comp, ratio = evaluate_mesh(mesh, dataset.gt_mesh,
                                         n_samples=cfg.eval.mesh_samples,
                                         seed=cfg.seed)
        report.acc_cm = acc
        report.comp_cm = comp
        report.comp_ratio_pct = ratio
    return report, per_frame, mesh


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.scene not in SCENES:
        raise ConfigError(f"unknown scene {args.scene!r}; choose from {sorted(SCENES)}")
    intr = default_intrinsics(args.size, args.size, fov_deg=args.fov)
    traj = OrbitTrajectory(n_frames=args.frames)
    dataset = generate_synthetic(SCENES[args.scene](), traj, intr,
                                 rng=np.random.default_rng(args.seed or 0))
    save_dataset(dataset, out)
    print(f"wrote {len(dataset)} frames to {out}")
    return EXIT_OK


def _run_mapping(dataset: Dataset, cfg: RunConfig, out: Path):
    model = build_model_from_config(cfg, dataset.bounds)
    mapper = Mapper(model, cfg.schedule, cfg.render, cfg.loss, seed=cfg.seed,
                    log_path=out / "run_log.jsonl")
    zf = ray_to_z_factor(dataset.frames[0].intrinsics)

    def eval_hook(m: Mapper) -> dict:
        ev = cfg.eval
        if ev.eval_every <= 0 or m.update_index % ev.eval_every:
            return {}
        frame = m.window.local[-1]
        stride = ev.eval_stride
        from .metrics import psnr
        out_r = render_view(model, _strided(frame.intrinsics, stride), frame.pose,
                            cfg.render.samples_per_ray,
                            np.random.default_rng(cfg.seed + 31),
                            mode=cfg.render.mode, near_min=cfg.render.near_min,
                            trunc=cfg.render.sdf_trunc)
        extras = {"psnr_db": psnr(out_r["color"], frame.image[::stride, ::stride])}
        gt = dataset.gt_depths.get(frame.frame_id)
        if gt is not None:
            z = out_r["depth"] * zf[::stride, ::stride]
            mask = (out_r["acc"] >= 0.5) & (gt[::stride, ::stride] > 0)
            if mask.any():
                extras["depth_l1_cm"] = float(
                    np.abs(z - gt[::stride, ::stride])[mask].mean() * 100.0)
        return extras

    mapper.eval_hook = eval_hook
    sched = cfg.schedule
    mapper.initialize(dataset.frames[:sched.init_window])
    rest = dataset.frames[sched.init_window:]
    n = sched.frames_per_update
    for start in range(0, len(rest) - len(rest) % n, n):
        mapper.step(rest[start:start + n])
        if cfg.eval.checkpoint_every > 0 and \
                mapper.update_index % cfg.eval.checkpoint_every == 0:
            save_checkpoint(out / "checkpoint.bin", model)
    save_checkpoint(out / "checkpoint.bin", model)
    return model, mapper


def _strided(intr: CameraIntrinsics, stride: int) -> CameraIntrinsics:
    return CameraIntrinsics(fx=intr.fx / stride, fy=intr.fy / stride,
                            cx=intr.cx / stride, cy=intr.cy / stride,
                            width=intr.width // stride,
                            height=intr.height // stride)


def cmd_map(args) -> int:
    cfg = _load_run_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(args.dataset)
    save_config(cfg, out / "config.json")
    model, mapper = _run_mapping(dataset, cfg, out)
    report, per_frame, mesh = _eval_model(model, dataset, cfg, out,
                                          write_images=True)
    if not mesh.is_empty:
        write_ply(mesh, out / "mesh.ply")
    write_report(out / "report.txt", report, per_frame)
    print(format_report(report), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(args.dataset)
    model = load_checkpoint(args.checkpoint)
    report, per_frame, mesh = _eval_model(model, dataset, cfg, out,
                                          write_images=args.write_images)
    write_report(out / "report.txt", report, per_frame)
    print(format_report(report), end="")
    return EXIT_OK


def cmd_render(args) -> int:
    cfg = _load_run_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = load_checkpoint(args.checkpoint)
    vals = [float(v) for v in args.pose.split()]
    if len(vals) != 7:
        raise ConfigError("--pose expects 'tx ty tz qx qy qz qw'")
    pose = Pose.from_quaternion(*vals)
    if args.intrinsics:
        iv = args.intrinsics.split()
        if len(iv) != 6:
            raise ConfigError("--intrinsics expects 'fx fy cx cy width height'")
        intr = CameraIntrinsics(fx=float(iv[0]), fy=float(iv[1]), cx=float(iv[2]),
                                cy=float(iv[3]), width=int(iv[4]), height=int(iv[5]))
    else:
        intr = default_intrinsics(args.size, args.size)
    rng = np.random.default_rng(cfg.seed)
    out_r = render_view(model, intr, pose, cfg.render.samples_per_ray, rng,
                        mode=cfg.render.mode, near_min=cfg.render.near_min,
                        trunc=cfg.render.sdf_trunc)
    _write_png(out / "color.png", out_r["color"])
    _depth_png(out / "depth.png", out_r["depth"] * ray_to_z_factor(intr))
    print(f"wrote renders to {out}")
    return EXIT_OK


ABLATION_AXES = {
    "factorization": [("factorized", {"field": {"mode": "factorized"}}),
                      ("dense", {"field": {"mode": "dense"}})],
    "dual_path": [("with_coords", {"field": {"app_coords": True}}),
                  ("no_coords", {"field": {"app_coords": False}})],
    "render_mode": [("sdf_density", {"render": {"mode": "sdf_density"}}),
                    ("sdf_direct", {"render": {"mode": "sdf_direct"}}),
                    ("occupancy", {"render": {"mode": "occupancy"}})],
}


def _merge(base: dict, extra: dict) -> dict:
    out = {k: dict(v) if isinstance(v, dict) else v for k, v in base.items()}
    for k, v in extra.items():
        if isinstance(v, dict):
            out.setdefault(k, {})
            out[k].update(v)
        else:
            out[k] = v
    return out


def cmd_ablate(args) -> int:
    if args.axis not in ABLATION_AXES:
        raise ConfigError(
            f"unknown ablation axis {args.axis!r}; choose from {sorted(ABLATION_AXES)}")
    base_cfg = _load_run_config(args)
    base_dict = base_cfg.to_dict()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(args.dataset)
    rows = []
    for name, patch in ABLATION_AXES[args.axis]:
        cfg = config_from_dict(_merge(base_dict, patch))
        run_dir = out / name
        run_dir.mkdir(exist_ok=True)
        model, mapper = _run_mapping(dataset, cfg, run_dir)
        report, per_frame, mesh = _eval_model(model, dataset, cfg, run_dir)
        write_report(run_dir / "report.txt", report, per_frame)
        tail = [r.get("depth_l1_cm") for r in mapper.records[-5:]
                if r.get("depth_l1_cm") is not None]
        rows.append({
            "variant": name,
            "psnr_db": report.psnr_db,
            "ssim": report.ssim,
            "depth_l1_cm": report.depth_l1_cm,
            "comp_ratio_pct": report.comp_ratio_pct,
            "tail_depth_l1_cm": float(np.mean(tail)) if tail else None,
        })
    lines = ["variant  psnr_db  ssim  depth_l1_cm  comp_ratio_pct  tail_depth_l1_cm"]
    for r in rows:
        def fmt(v):
            return "absent" if v is None else f"{v:.4f}"
        lines.append(f"{r['variant']}  {fmt(r['psnr_db'])}  {fmt(r['ssim'])}  "
                     f"{fmt(r['depth_l1_cm'])}  {fmt(r['comp_ratio_pct'])}  "
                     f"{fmt(r['tail_depth_l1_cm'])}")
    (out / "comparison.txt").write_text("\n".join(lines) + "\n")
    (out / "comparison.jsonl").write_text(
        "\n".join(json.dumps(r, sort_keys=True) for r in rows) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="monomap",
        description="Incremental monocular dense mapping from posed RGB frames")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=True):
        if dataset:
            p.add_argument("--dataset", required=True, help="dataset directory")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
        p.add_argument("--threads", type=int, default=None,
                       help="evaluation parallelism (default 1, deterministic)")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth", help="generate a synthetic dataset",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--scene", default="desk", choices=sorted(SCENES))
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--size", type=int, default=64, help="image width and height")
    p.add_argument("--fov", type=float, default=85.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("map", help="run online mapping over a dataset",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    common(p)
    p.add_argument("--iters-init", type=int, default=None,
                   help="initialization iterations (default 1500)")
    p.add_argument("--iters-online", type=int, default=None,
                   help="iterations per map update (default 20)")
    p.add_argument("--window", type=int, default=None,
                   help="local window capacity (default 15)")
    p.add_argument("--rays", type=int, default=None,
                   help="rays per iteration (default 2048)")
    p.set_defaults(fn=cmd_map)

    p = sub.add_parser("eval", help="evaluate a checkpoint against a dataset",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--write-images", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("render", help="render color+depth from a pose",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pose", required=True, help="'tx ty tz qx qy qz qw'")
    p.add_argument("--intrinsics", default=None,
                   help="'fx fy cx cy width height' (default: 64x64, 85 deg fov)")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("ablate", help="paired ablation runs with a comparison table",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    common(p)
    p.add_argument("--axis", required=True, choices=sorted(ABLATION_AXES))
    p.add_argument("--iters-init", type=int, default=None)
    p.add_argument("--iters-online", type=int, default=None)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--rays", type=int, default=None)
    p.set_defaults(fn=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericsError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

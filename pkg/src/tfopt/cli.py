"""Command-line entry point.

Subcommands: optimize (full run from a config file), render (one image from
a TF file), init-density (initialization only), inspect-tf (summarize a TF
file). Exit codes: 0 success, 1 validation problem, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import augment, config as config_mod, images, initialize, optimizer, transfer
from .camera import CameraPose
from .errors import ConfigError, ScorerError, TFFormatError, TfoptError, VolumeFormatError
from .render import RenderConfig, render
from .scorer import ReferenceScorer, RemoteScorer
from .volume import load_raw, resolve_meta


def _add_volume_args(p: argparse.ArgumentParser):
    p.add_argument("--volume", required=True, help="raw volume file")
    p.add_argument("--dims", type=int, nargs=3, metavar=("X", "Y", "Z"),
                   help="voxel dimensions (else sidecar/filename)")
    p.add_argument("--dtype", choices=("uint8", "uint16", "float32"),
                   help="voxel dtype (else sidecar/filename)")
    p.add_argument("--spacing", type=float, nargs=3, metavar=("SX", "SY", "SZ"),
                   help="voxel spacing, defaults to 1 1 1")


def _load_field(args):
    meta = resolve_meta(args.volume,
                        dims=tuple(args.dims) if args.dims else None,
                        dtype=args.dtype,
                        spacing=tuple(args.spacing) if args.spacing else None)
    return load_raw(args.volume, meta)


def _load_reference(path) -> np.ndarray:
    if path.endswith(".npy"):
        return np.asarray(np.load(path), dtype=np.float64)
    return images.read_png(path)


def _make_run_dir(out_cfg) -> str:
    base = out_cfg["dir"]
    if out_cfg["run_name"]:
        run_dir = os.path.join(base, out_cfg["run_name"])
        os.makedirs(run_dir, exist_ok=False)
        return run_dir
    stamp = time.strftime("run-%Y%m%d-%H%M%S")
    candidate = os.path.join(base, stamp)
    n = 1
    while os.path.exists(candidate):
        n += 1
        candidate = os.path.join(base, f"{stamp}-{n}")
    os.makedirs(candidate)
    return candidate


def render_still(field, tf, pose: CameraPose, render_cfg: RenderConfig,
                 gray: float = 0.5) -> np.ndarray:
    """Render one image over a constant gray background; the float image
    before any PNG quantization."""
    bg = augment.gray_background(render_cfg.height, render_cfg.width, gray)
    out = render(field, tf, pose, render_cfg, bg, keep_cache=False)
    return out.image


def cmd_optimize(args) -> int:
    cfg = config_mod.load_config(args.config)
    cfg = config_mod.apply_overrides(cfg, args.set or [])
    rc = config_mod.RunConfig.from_dict(cfg)

    field = load_raw(cfg["volume"]["path"], rc.volume_meta())
    render_cfg = rc.render_config()
    obj_cfg = rc.objective_config()
    sampling = rc.sampling_settings()
    opt = cfg["optimizer"]

    sc = cfg["scorer"]
    if sc["reference_image"] is not None:
        reference = _load_reference(sc["reference_image"])
        expected = (render_cfg.height, render_cfg.width, 3)
        if reference.shape != expected:
            raise ConfigError(
                f"reference image is {reference.shape}, render size wants {expected}",
                field="scorer.reference_image")
        scorer = ReferenceScorer(reference)
        print(f"scorer: reference image {sc['reference_image']}")
    else:
        scorer = RemoteScorer(sc["endpoint"])
        info = scorer.info
        print(f"scorer: remote {sc['endpoint']} model={info.model_id} "
              f"input={info.input_size} temperature={info.temperature}")

    run_dir = _make_run_dir(cfg["output"])
    with open(os.path.join(run_dir, "resolved_config.json"), "w", encoding="utf-8") as fh:
        fh.write(rc.to_json())
    print(f"run directory: {run_dir}")

    def snapshot(step_idx, params):
        realized = transfer.realize(params, field.value_min, field.value_max)
        image = render_still(field, realized,
                             augment.reference_pose(field.bounding_radius), render_cfg)
        images.write_png(os.path.join(run_dir, f"snapshot_{step_idx:06d}.png"), image)

    def progress(report):
        flag = " SKIPPED" if report.skipped else ""
        print(f"step {report.step:4d}/{opt['steps']} lr={report.lr:.4f} "
              f"l_clip={report.l_clip:.6f} l_density={report.l_density:.6f} "
              f"l_reg={report.l_reg:.6f} mean_T={report.mean_t:.4f}{flag}")

    try:
        result = optimizer.run(
            field, scorer, cfg["prompt"]["positive"],
            user_negatives=tuple(cfg["prompt"]["negatives"]),
            sampling=sampling, obj_cfg=obj_cfg, render_cfg=render_cfg,
            control_points=int(cfg["tf"]["control_points"]),
            rho=float(cfg["tf"]["rho"]),
            lr0=float(opt["lr"]), mu=float(opt["momentum"]),
            total_steps=int(opt["steps"]), views_per_step=int(opt["views_per_step"]),
            snapshot_every=int(cfg["output"]["snapshot_every"]),
            snapshot_fn=snapshot if cfg["output"]["snapshot_every"] else None,
            progress_fn=progress)
    finally:
        scorer.close()

    tf_path = os.path.join(run_dir, "final.tf")
    transfer.export_tf(result.realized, tf_path)
    optimizer.write_log(result.reports, os.path.join(run_dir, "train_log.csv"),
                        views_per_step=int(opt["views_per_step"]))
    print(f"init mean transmittance: {result.init.mean_transmittance:.4f} "
          f"(converged: {result.init.converged})")
    print(f"wrote {tf_path}")
    return 0


def cmd_render(args) -> int:
    field = _load_field(args)
    realized = transfer.import_tf(args.tf)
    span = max(abs(field.value_min), abs(field.value_max), 1.0)
    if (abs(realized.value_min - field.value_min) > 1e-6 * span
            or abs(realized.value_max - field.value_max) > 1e-6 * span):
        print(f"note: TF covers [{realized.value_min}, {realized.value_max}], "
              f"volume spans [{field.value_min}, {field.value_max}]", file=sys.stderr)
    distance = args.distance if args.distance is not None \
        else 3.0 * field.bounding_radius
    pose = CameraPose(yaw=np.deg2rad(args.yaw_deg), pitch=np.deg2rad(args.pitch_deg),
                      distance=distance)
    render_cfg = RenderConfig(width=args.width, height=args.height,
                              step_size=args.step_size,
                              fov_y=float(np.deg2rad(args.fov_y_deg)))
    image = render_still(field, realized, pose, render_cfg, gray=args.gray)
    images.write_png(args.out, image)
    print(f"wrote {args.out}")
    return 0


def cmd_init_density(args) -> int:
    if args.control_points < 2:
        raise ConfigError("need at least 2 control points", field="control_points")
    if not 0.0 < args.rho < 1.0:
        raise ConfigError("rho must be in (0, 1)", field="rho")
    field = _load_field(args)
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 0, 0, optimizer.TAG_INIT]))
    result = initialize.init_params(field, args.control_points, rng, args.rho)
    realized = transfer.realize(result.params, field.value_min, field.value_max)
    transfer.export_tf(realized, args.out)
    print(f"mean transmittance at the initialization view: {result.mean_transmittance:.4f} "
          f"(target {args.rho}, converged: {result.converged})")
    print(f"wrote {args.out}")
    return 0


def cmd_inspect_tf(args) -> int:
    realized = transfer.import_tf(args.tf)
    m = realized.control_points
    d = realized.density
    print(f"{m} control points over [{realized.value_min!r}, {realized.value_max!r}]")
    print(f"density range [{float(d.min())!r}, {float(d.max())!r}]")
    peaks = [k for k in range(1, m - 1) if d[k] > d[k - 1] and d[k] > d[k + 1]]
    if peaks:
        desc = ", ".join(
            f"value {float(realized.positions[k])!r} density {float(d[k])!r}" for k in peaks)
        print(f"{len(peaks)} density peak(s): {desc}")
    else:
        print("0 density peaks")
    print("control points (position, density, r, g, b):")
    for k in range(m):
        r, g, b = (float(c) for c in realized.color[k])
        print(f"  {float(realized.positions[k])!r} {float(d[k])!r} {r!r} {g!r} {b!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tfopt",
        description="Optimize volume-rendering transfer functions against a "
                    "differentiable image scorer.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="run the full optimization from a config file")
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key, e.g. --set optimizer.steps=50")
    p.set_defaults(fn=cmd_optimize)

    p = sub.add_parser("render", help="render one image from a TF file")
    _add_volume_args(p)
    p.add_argument("--tf", required=True, help="transfer function file")
    p.add_argument("--yaw-deg", type=float, default=0.0)
    p.add_argument("--pitch-deg", type=float, default=0.0)
    p.add_argument("--distance", type=float, default=None,
                   help="camera distance in world units (default 3x bounding radius)")
    p.add_argument("--width", type=int, default=224)
    p.add_argument("--height", type=int, default=224)
    p.add_argument("--step-size", type=float, default=None)
    p.add_argument("--fov-y-deg", type=float, default=60.0)
    p.add_argument("--gray", type=float, default=0.5, help="background shade in [0, 1]")
    p.add_argument("--out", required=True, help="output PNG path")
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("init-density", help="run initialization only and export the TF")
    _add_volume_args(p)
    p.add_argument("--control-points", type=int, default=32)
    p.add_argument("--rho", type=float, default=0.05, help="target mean transmittance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output TF path")
    p.set_defaults(fn=cmd_init_density)

    p = sub.add_parser("inspect-tf", help="summarize a TF file")
    p.add_argument("tf", help="transfer function file")
    p.set_defaults(fn=cmd_inspect_tf)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        where = f" [{exc.field}]" if exc.field else ""
        print(f"config error{where}: {exc}", file=sys.stderr)
        return 1
    except (VolumeFormatError, TFFormatError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    except ScorerError as exc:
        print(f"scorer error: {exc}", file=sys.stderr)
        return 2
    except TfoptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

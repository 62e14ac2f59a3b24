"""``spatflow`` command line.

Exit codes: 0 success, 2 usage or validation error, 3 failure inside a stage.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import formats
from ._parallel import set_threads
from .config import SCHEMA, ProjectConfig
from .errors import SpatflowError, StageError, ValidationError
from .pipeline import StageTimer, extract, load_target, settings_from_config, transfer, write_transfer_outputs
from .refine import build_graph
from .render import compare_sequences, default_camera, fixed_path, render
from .trajectory import MOTIONS, MotionSpec, synthesize_scene
from .velocity import TargetCloud, integrate

EXIT_OK, EXIT_USAGE, EXIT_STAGE = 0, 2, 3

log = logging.getLogger("spatflow")


def _vec3(text):
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}")
    return tuple(parts)


def _common(parser):
    g = parser.add_argument_group("run")
    g.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: $MM_THREADS or 1)")
    g.add_argument("-v", "--verbose", action="store_true")


def _config_flags(parser):
    g = parser.add_argument_group("config (each overrides the --config file)")
    g.add_argument("--config", help="INI project config")
    g.add_argument("--dump-config", action="store_true",
                   help="print the effective config and exit")
    for section, key, _, _ in SCHEMA:
        g.add_argument("--" + key.replace("_", "-"), dest=key, default=None, metavar=section.upper())


def build_parser():
    p = argparse.ArgumentParser(prog="spatflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic rigid-motion scene")
    s.add_argument("--motion", required=True, choices=MOTIONS)
    s.add_argument("--frames", type=int, default=10)
    s.add_argument("--n-points", type=int, default=300)
    s.add_argument("--components", type=int, default=1)
    s.add_argument("--velocity", type=_vec3, default=(0.01, 0.0, 0.0))
    s.add_argument("--axis", type=_vec3, default=(0.0, 0.0, 1.0))
    s.add_argument("--deg-per-frame", type=float, default=5.0)
    s.add_argument("--center", type=_vec3, default=None)
    s.add_argument("--amplitude", type=float, default=0.1)
    s.add_argument("--frequency", type=float, default=0.1)
    s.add_argument("--direction", type=_vec3, default=(1.0, 0.0, 0.0))
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--radius", type=float, default=0.01, help="splat radius in source.ply")
    s.add_argument("--precision", type=int, choices=(32, 64), default=32)
    s.add_argument("-o", "--output-dir", default="scene")
    _common(s)

    for name, text in (
        ("extract", "trajectories (or tracks + depth) -> prior"),
        ("transfer", "prior + target cloud -> field, frames, metrics"),
        ("render", "target cloud + field file -> frames"),
        ("graph-dump", "write the target's k-NN graph as CSV"),
    ):
        sp = sub.add_parser(name, help=text)
        _config_flags(sp)
        if name == "render":
            sp.add_argument("--field", required=False, help="MMVF field (default: <output-dir>/field.mmvf)")
        _common(sp)

    m = sub.add_parser("metrics", help="per-frame PSNR/SSIM of two frame directories")
    m.add_argument("frames")
    m.add_argument("reference")
    m.add_argument("-o", "--output", help="CSV path (default: stdout)")
    _common(m)
    return p


# ---------------------------------------------------------------------------
# Commands


def _load_config(args):
    cfg = ProjectConfig.from_file(args.config) if args.config else ProjectConfig()
    cfg.update({key: getattr(args, key) for _, key, _, _ in SCHEMA})
    return cfg


def _report(timings):
    for name, secs in timings.items():
        print(f"stage {name}: {secs:.3f} s", file=sys.stderr)


def _position_colors(points):
    lo, hi = points.min(axis=0), points.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return 0.15 + 0.7 * (points - lo) / span


def cmd_synth(args):
    spec = MotionSpec(
        motion=args.motion, frames=args.frames, n_points=args.n_points,
        components=args.components, velocity=args.velocity, axis=args.axis,
        deg_per_frame=args.deg_per_frame, center=args.center, amplitude=args.amplitude,
        frequency=args.frequency, direction=args.direction, noise=args.noise, seed=args.seed,
    )
    if not args.radius > 0:
        raise ValidationError("radius must be > 0")
    trajs, truth = synthesize_scene(spec)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    formats.save_trajectories(out / "trajectories.mmtj", trajs, args.precision)
    formats.save_prior(out / "prior_gt.mmsp", truth, args.precision)
    first = trajs.positions[:, 0]
    cloud = TargetCloud(first, _position_colors(first), trajs.labels, args.radius)
    from .target import save_cloud

    save_cloud(out / "source.ply", cloud)
    print(out)
    return EXIT_OK


def cmd_extract(cfg, args):
    tracks = depths = cams = masks = trajs = None
    if cfg.trajectories:
        trajs = formats.load_trajectories(cfg.trajectories)
    elif cfg.tracks and cfg.depth_dir:
        tracks = formats.load_tracks(cfg.tracks)
        depths = formats.load_depth_dir(cfg.depth_dir)
    else:
        raise ValidationError("extract needs 'trajectories', or 'tracks' with 'depth_dir'")
    if cfg.mask_dir:
        masks = formats.load_mask_dir(cfg.mask_dir)
    if cfg.cameras:
        if tracks is not None:
            w, h = tracks.width, tracks.height
        elif masks:
            h, w = np.asarray(masks[0]).shape
        else:
            raise ValidationError("a camera file needs tracks or masks to fix the image size")
        cams = formats.read_cameras(cfg.cameras, w, h)
    res = extract(trajs, tracks=tracks, depths=depths, cameras=cams, masks=masks,
                  window=cfg.window, normalize=cfg.normalize)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "prior.mmsp"
    try:
        formats.save_prior(target, res.prior, cfg.precision)
    except BaseException:
        formats.remove_quietly([target])
        raise
    for c, r in enumerate(res.residuals):
        print(f"component {c}: max fit residual {float(np.max(r)):.3e}", file=sys.stderr)
    _report(res.timings)
    print(target)
    return EXIT_OK


def _camera_path(cfg):
    if not cfg.camera_path:
        return None
    return formats.read_cameras(cfg.camera_path, cfg.width, cfg.height)


def cmd_transfer(cfg, args):
    cfg.validate(needs=("prior", "target"))
    prior = formats.load_prior(cfg.prior)
    cloud, seeds = load_target(cfg)
    settings = settings_from_config(cfg)
    res = transfer(prior, cloud, settings, seeds=seeds, camera_path=_camera_path(cfg),
                   threads=args.threads)
    out = Path(cfg.output_dir)
    planned = [out / n for n in ("field.mmvf", "loss.csv", "boundary.txt", "frames", "metrics.csv")]
    try:
        write_transfer_outputs(res, out, cfg.precision, cfg.reference_dir)
    except BaseException:
        formats.remove_quietly(planned)
        raise
    _report(res.timings)
    print(out)
    return EXIT_OK


def cmd_render(cfg, args):
    cfg.validate(needs=("target",))
    field_path = args.field or str(Path(cfg.output_dir) / "field.mmvf")
    if not Path(field_path).exists():
        raise ValidationError(f"field file does not exist: {field_path}")
    timer = StageTimer()
    cloud, _ = load_target(cfg)
    with timer.stage("render"):
        fld = formats.load_field(field_path)
        pos = integrate(cloud, fld)
        path = _camera_path(cfg) or fixed_path(default_camera(pos[0], cfg.width, cfg.height), len(pos))
        frames = render(pos, cloud, path, cfg.background, threads=args.threads)
    out = Path(cfg.output_dir) / "frames"
    try:
        formats.write_frames(out, frames)
    except BaseException:
        formats.remove_quietly([out])
        raise
    _report(timer.timings)
    print(out)
    return EXIT_OK


def cmd_graph_dump(cfg, args):
    cfg.validate(needs=("target",))
    cloud, _ = load_target(cfg)
    timer = StageTimer()
    with timer.stage("graph"):
        g = build_graph(cloud.positions, cfg.neighbors)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = zip(g.rows.tolist(), g.indices.tolist(), g.sqdist.tolist())
    formats.write_csv(out / "graph.csv", ["i", "j", "sqdist"], rows)
    _report(timer.timings)
    print(out / "graph.csv")
    return EXIT_OK


def cmd_metrics(args):
    rows = compare_sequences(formats.read_frames(args.frames), formats.read_frames(args.reference))
    if args.output:
        formats.write_csv(args.output, ["frame", "psnr_db", "ssim"], rows)
    else:
        print("frame,psnr_db,ssim")
        for i, p, s in rows:
            print(f"{i},{p!r},{s!r}")
    if rows:
        print(f"mean psnr {np.mean([r[1] for r in rows]):.3f} dB, "
              f"mean ssim {np.mean([r[2] for r in rows]):.5f}", file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "extract": cmd_extract,
    "transfer": cmd_transfer,
    "render": cmd_render,
    "graph-dump": cmd_graph_dump,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be >= 1")
    set_threads(args.threads)
    try:
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "metrics":
            return cmd_metrics(args)
        cfg = _load_config(args)
        if args.dump_config:
            sys.stdout.write(cfg.dumps())
            return EXIT_OK
        cfg.validate()
        return COMMANDS[args.command](cfg, args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc.cause, ValidationError) else EXIT_STAGE
    except (SpatflowError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE
    finally:
        set_threads(None)


if __name__ == "__main__":
    sys.exit(main())

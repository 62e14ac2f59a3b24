"""End-to-end stages: prior extraction and transfer + generation."""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats
from .errors import EmptyForeground, LabelCountMismatch, SpatflowError, StageError, ValidationError
from .geometry import CameraModel
from .prior import SpatPrior, build_prior, fit_residuals
from .refine import (
    BoundarySet,
    RefinementConfig,
    build_graph,
    cross_label_mask,
    flood_fill_boundary,
    propagate_static,
    refine,
)
from .render import compare_sequences, default_camera, fixed_path, render
from .target import assign_labels, denormalize_points, normalize_cloud
from .trajectory import TrajectorySet, lift_tracks, mask_trajectories, normalize_trajectories
from .velocity import TargetCloud, VelocityField, compute_field, extend_field, integrate, scale_field

log = logging.getLogger(__name__)


@dataclass
class StageTimer:
    timings: dict = field(default_factory=dict)

    @contextmanager
    def stage(self, name):
        start = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except SpatflowError as exc:
            raise StageError(name, exc) from exc
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - start


def default_cameras(n_frames, width, height):
    """Identity-pose cameras used when no camera file is supplied."""
    f = float(max(width, height))
    cam = CameraModel.from_params(f, f, width / 2, height / 2, width, height)
    return [cam] * n_frames


# ---------------------------------------------------------------------------
# Extraction


@dataclass
class ExtractResult:
    prior: SpatPrior
    trajectories: TrajectorySet
    residuals: np.ndarray
    timings: dict


def extract(trajs: TrajectorySet | None = None, *, tracks=None, depths=None, cameras=None,
            masks=None, window=3, normalize=True) -> ExtractResult:
    """Trajectories (given, or lifted from tracks + depth) -> masked ->
    normalized -> per-component prior."""
    timer = StageTimer()
    if trajs is None:
        if tracks is None or depths is None:
            raise ValidationError("need trajectories or tracks + depth maps")
        with timer.stage("lift"):
            cams = cameras or default_cameras(tracks.n_frames, tracks.width, tracks.height)
            trajs = lift_tracks(tracks, depths, cams)
    if masks is not None:
        with timer.stage("mask"):
            if cameras is None:
                h, w = np.asarray(masks[0]).shape
                cameras = default_cameras(trajs.n_frames, w, h)
            trajs = mask_trajectories(trajs, masks, cameras, window)
            if trajs.n_trajectories == 0:
                raise EmptyForeground("no trajectory falls inside the foreground masks")
    if normalize:
        with timer.stage("normalize"):
            trajs = normalize_trajectories(trajs)
    with timer.stage("prior"):
        prior = build_prior(trajs)
        residuals = fit_residuals(prior, trajs)
    for c, res in enumerate(residuals):
        log.info("component %d: max step-fit RMS residual %.3e", c, float(res.max()))
    return ExtractResult(prior, trajs, residuals, timer.timings)


# ---------------------------------------------------------------------------
# Transfer


@dataclass
class TransferSettings:
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    neighbors: int = 2048
    hops: int = 3
    static_mode: str = "neighborhood"  # or "global" / "off"
    speed: float = 1.0
    repeats: int = 1
    mode: str = "loop"
    normalize: bool = True
    width: int = 256
    height: int = 256
    background: tuple = (255, 255, 255)
    render: bool = True


@dataclass
class TransferResult:
    field: VelocityField  # final field in the target's own units
    positions: np.ndarray  # (T', N, 3) in the target's own units
    frames: list
    trace: object
    boundary: BoundarySet
    cameras: list
    timings: dict


def transfer(prior: SpatPrior, cloud: TargetCloud, settings: TransferSettings | None = None,
             seeds=None, camera_path=None, threads=None) -> TransferResult:
    """Velocity field -> refine -> static propagation -> speed/duration
    control -> Euler integration -> render."""
    s = settings or TransferSettings()
    timer = StageTimer()
    with timer.stage("prepare"):
        if cloud.n_components != prior.n_components:
            raise LabelCountMismatch(
                f"target has {cloud.n_components} component(s), prior has {prior.n_components}"
            )
        if s.normalize:
            work, scale, offset = normalize_cloud(cloud)
        else:
            work, scale, offset = cloud, 1.0, np.zeros(3)

    with timer.stage("field"):
        fld = compute_field(prior, work)

    need_graph = (s.refinement.sweeps > 0) or s.static_mode == "neighborhood"
    graph = None
    boundary = BoundarySet(np.zeros(0, np.int64))
    with timer.stage("refine"):
        if need_graph:
            graph = build_graph(work.positions, s.neighbors)
            if prior.n_components > 1:
                if seeds is None or len(seeds) == 0:
                    boundary = BoundarySet(np.flatnonzero(cross_label_mask(graph, work.labels)))
                else:
                    boundary = flood_fill_boundary(graph, work.labels, seeds, s.hops)
        trace = None
        if s.refinement.sweeps > 0:
            fld, trace = refine(fld, graph, boundary, s.refinement, threads=threads)
        if s.static_mode != "off":
            fld = propagate_static(fld, s.refinement.epsilon, s.static_mode, graph)

    with timer.stage("control"):
        fld = extend_field(scale_field(fld, s.speed), s.repeats, s.mode)
        pos = integrate(work, fld)
        if s.normalize:
            pos = denormalize_points(pos, scale, offset)
        out_field = VelocityField(np.diff(pos, axis=0)) if s.normalize else fld

    frames, cams = [], []
    if s.render:
        with timer.stage("render"):
            if camera_path is None:
                cams = fixed_path(default_camera(pos[0], s.width, s.height), len(pos))
            else:
                cams = list(camera_path)
                if len(cams) != len(pos):
                    raise ValidationError(
                        f"camera path has {len(cams)} poses, sequence has {len(pos)} frames"
                    )
            frames = render(pos, cloud, cams, s.background, threads=threads)
    return TransferResult(out_field, pos, frames, trace, boundary, cams, timer.timings)


def settings_from_config(cfg) -> TransferSettings:
    return TransferSettings(
        refinement=RefinementConfig(cfg.lambda_topo, cfg.lambda_kin, cfg.sweeps, cfg.damping, cfg.epsilon),
        neighbors=cfg.neighbors,
        hops=cfg.hops,
        static_mode=cfg.static_mode,
        speed=cfg.speed,
        repeats=cfg.repeats,
        mode=cfg.mode,
        normalize=cfg.normalize,
        width=cfg.width,
        height=cfg.height,
        background=cfg.background,
        render=cfg.render,
    )


def load_target(cfg):
    """Target cloud with labels from a label file or labelled seeds, plus the
    flood-fill seed indices (or None)."""
    from .target import load_cloud, read_labels

    warn = []
    cloud = load_cloud(cfg.target, warn_list=warn)
    if warn:
        log.warning("target: ignored PLY properties %s", warn)
    seeds = None
    if cfg.labels:
        cloud = assign_labels(cloud, read_labels(cfg.labels))
    if cfg.seeds:
        rows = formats.read_index_file(cfg.seeds)
        seeds = np.array([r[0] for r in rows], dtype=np.int64)
        if rows and all(len(r) >= 2 for r in rows) and not cfg.labels:
            cloud = assign_labels(cloud, seeds=seeds, seed_labels=[r[1] for r in rows],
                                  k=min(cfg.neighbors, 16))
    return cloud, seeds


def write_transfer_outputs(result: TransferResult, out_dir, precision=32, reference_dir=None):
    out = Path(out_dir)
    written = []
    out.mkdir(parents=True, exist_ok=True)
    formats.save_field(out / "field.mmvf", result.field, precision)
    written.append(out / "field.mmvf")
    if result.trace is not None:
        formats.write_csv(out / "loss.csv", ["sweep", "t", "L_kin", "L_topo", "L_total"],
                          result.trace.rows())
        written.append(out / "loss.csv")
    formats.write_index_file(out / "boundary.txt", result.boundary.indices)
    written.append(out / "boundary.txt")
    if result.frames:
        formats.write_frames(out / "frames", result.frames)
        written.append(out / "frames")
    if reference_dir is not None and result.frames:
        ref = formats.read_frames(reference_dir)
        rows = compare_sequences(result.frames, ref)
        formats.write_csv(out / "metrics.csv", ["frame", "psnr_db", "ssim"], rows)
        written.append(out / "metrics.csv")
    return written

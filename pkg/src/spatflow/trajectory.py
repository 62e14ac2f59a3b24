"""3D point trajectories: lifting from 2D tracks, foreground masking,
normalization, and synthetic scenes with known motion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateCloud,
    InvalidSpec,
    NonPositiveDepth,
    NoVisibleSample,
    ResolutionMismatch,
    ValidationError,
)
from .geometry import CameraModel, RigidTransform, axis_angle_matrix

MOTIONS = ("translation", "rotation", "oscillation")


@dataclass
class Track2DSet:
    uv: np.ndarray  # (K, T, 2) pixel coordinates
    visible: np.ndarray  # (K, T) bool
    width: int
    height: int

    def __post_init__(self):
        self.uv = np.asarray(self.uv, dtype=np.float64)
        self.visible = np.asarray(self.visible, dtype=bool)
        if self.uv.ndim != 3 or self.uv.shape[2] != 2:
            raise ValidationError(f"uv must be (K, T, 2), got {self.uv.shape}")
        if self.visible.shape != self.uv.shape[:2]:
            raise ValidationError("visibility shape does not match tracks")
        u, v = self.uv[..., 0][self.visible], self.uv[..., 1][self.visible]
        if np.any(u < 0) or np.any(u > self.width - 1) or np.any(v < 0) or np.any(v > self.height - 1):
            raise ValidationError("visible track sample outside the frame")

    @property
    def n_tracks(self):
        return self.uv.shape[0]

    @property
    def n_frames(self):
        return self.uv.shape[1]


@dataclass
class TrajectorySet:
    positions: np.ndarray  # (K, T, 3)
    labels: np.ndarray  # (K,) component index per trajectory
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        p = self.positions
        if p.ndim != 3 or p.shape[2] != 3:
            raise ValidationError(f"positions must be (K, T, 3), got {p.shape}")
        if p.shape[1] < 2:
            raise ValidationError("a trajectory set needs at least 2 frames")
        if len(self.labels) != p.shape[0]:
            raise ValidationError("one component label per trajectory required")
        if not np.all(np.isfinite(p)):
            raise ValidationError("trajectory positions must be finite")
        if np.any(self.labels < 0):
            raise ValidationError("component labels must be >= 0")

    @property
    def n_trajectories(self):
        return self.positions.shape[0]

    @property
    def n_frames(self):
        return self.positions.shape[1]

    @property
    def n_components(self):
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def subset(self, keep):
        keep = np.asarray(keep)
        return TrajectorySet(self.positions[keep], self.labels[keep], dict(self.meta))


# ---------------------------------------------------------------------------
# Lifting


def _bilinear(image, u, v):
    h, w = image.shape
    x0 = np.clip(np.floor(u).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(v).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = u - x0
    ay = v - y0
    top = image[y0, x0] * (1 - ax) + image[y0, x1] * ax
    bottom = image[y1, x0] * (1 - ax) + image[y1, x1] * ax
    return top * (1 - ay) + bottom * ay


def lift_tracks(tracks: Track2DSet, depths, cameras) -> TrajectorySet:
    """Back-project 2D tracks to world-space trajectories.

    Depth is sampled bilinearly at the sub-pixel track location and the
    camera-frame point is moved to world space with that frame's pose.
    Samples that are not visible are filled by linear interpolation between
    the nearest visible frames, and clamped at the sequence ends.
    """
    depths = [np.asarray(d, dtype=np.float64) for d in depths]
    k, t = tracks.n_tracks, tracks.n_frames
    if len(depths) != t:
        raise ResolutionMismatch(f"{len(depths)} depth maps for {t} frames")
    if len(cameras) != t:
        raise ResolutionMismatch(f"{len(cameras)} cameras for {t} frames")
    for i, d in enumerate(depths):
        if d.shape != (tracks.height, tracks.width):
            raise ResolutionMismatch(
                f"depth map {i} is {d.shape[1]}x{d.shape[0]}, tracks are "
                f"{tracks.width}x{tracks.height}"
            )

    out = np.zeros((k, t, 3))
    for ti in range(t):
        vis = tracks.visible[:, ti]
        if not vis.any():
            continue
        u = tracks.uv[vis, ti, 0]
        v = tracks.uv[vis, ti, 1]
        d = _bilinear(depths[ti], u, v)
        if not np.all(np.isfinite(d) & (d > 0)):
            raise NonPositiveDepth(f"frame {ti}: non-positive depth at a visible sample")
        out[vis, ti] = cameras[ti].unproject_many(u, v, d)

    frames = np.arange(t)
    for ki in range(k):
        vis = tracks.visible[ki]
        if not vis.any():
            raise NoVisibleSample(f"track {ki} is never visible")
        if vis.all():
            continue
        for axis in range(3):
            out[ki, ~vis, axis] = np.interp(frames[~vis], frames[vis], out[ki, vis, axis])
    return TrajectorySet(out, np.zeros(k, dtype=np.int64), {"source": "full", "scale": 1.0})


# ---------------------------------------------------------------------------
# Masking


def inside_masks(trajs: TrajectorySet, masks, cameras):
    """(K, T) bool: trajectory k projects onto foreground in frame t."""
    k, t = trajs.n_trajectories, trajs.n_frames
    if len(masks) != t or len(cameras) != t:
        raise ResolutionMismatch(f"need {t} masks and cameras, got {len(masks)} / {len(cameras)}")
    scale = float(trajs.meta.get("scale", 1.0))
    inside = np.zeros((k, t), dtype=bool)
    for ti in range(t):
        m = np.asarray(masks[ti], dtype=bool)
        cam = cameras[ti]
        if m.shape != (cam.height, cam.width):
            raise ResolutionMismatch(f"mask {ti} does not match camera resolution")
        u, v, z = cam.project_many(trajs.positions[:, ti] / scale)
        ok = z > 0
        col = np.full(k, -1, dtype=np.int64)
        row = np.full(k, -1, dtype=np.int64)
        col[ok] = np.floor(u[ok] + 0.5).astype(np.int64)
        row[ok] = np.floor(v[ok] + 0.5).astype(np.int64)
        ok &= (col >= 0) & (col < cam.width) & (row >= 0) & (row < cam.height)
        inside[ok, ti] = m[row[ok], col[ok]]
    return inside


def keep_by_window(inside, window=3):
    """Keep a row if some length-``window`` run of frames is mostly inside."""
    if window < 1 or window % 2 == 0:
        raise ValidationError(f"window must be odd and >= 1, got {window}")
    k, t = inside.shape
    w = min(window, t)
    counts = np.cumsum(np.pad(inside.astype(np.int64), ((0, 0), (1, 0))), axis=1)
    per_window = counts[:, w:] - counts[:, :-w]
    return np.any(2 * per_window > w, axis=1)


def mask_trajectories(trajs: TrajectorySet, masks, cameras, window=3) -> TrajectorySet:
    """Foreground trajectory set: union over time of masked trajectories.

    Trajectories are kept whole. An empty result is allowed; it is reported
    through ``meta["warnings"]``.
    """
    keep = keep_by_window(inside_masks(trajs, masks, cameras), window)
    out = trajs.subset(np.flatnonzero(keep))
    out.meta["source"] = "masked"
    warnings = list(trajs.meta.get("warnings", []))
    if not keep.any():
        warnings.append("mask_trajectories: no trajectory kept")
    out.meta["warnings"] = warnings
    return out


def normalize_trajectories(trajs: TrajectorySet) -> TrajectorySet:
    """Scale uniformly (about the origin) so the first-frame bounding box has
    unit diagonal. The cumulative factor is kept in ``meta["scale"]``."""
    first = trajs.positions[:, 0]
    if len(first) == 0:
        raise DegenerateCloud("cannot normalize an empty trajectory set")
    diag = float(np.linalg.norm(first.max(axis=0) - first.min(axis=0)))
    if diag == 0.0:
        raise DegenerateCloud("first-frame bounding box has zero diagonal")
    s = 1.0 / diag
    meta = dict(trajs.meta)
    meta["scale"] = float(meta.get("scale", 1.0)) * s
    return TrajectorySet(trajs.positions * s, trajs.labels.copy(), meta)


# ---------------------------------------------------------------------------
# Synthetic scenes


@dataclass
class MotionSpec:
    motion: str = "rotation"
    frames: int = 10
    n_points: int = 300
    components: int = 1
    velocity: tuple = (0.01, 0.0, 0.0)
    axis: tuple = (0.0, 0.0, 1.0)
    deg_per_frame: float = 5.0
    center: tuple | None = None
    amplitude: float = 0.1
    frequency: float = 0.1  # cycles per frame
    direction: tuple = (1.0, 0.0, 0.0)
    box_min: tuple = (-0.5, -0.5, -0.5)
    box_max: tuple = (0.5, 0.5, 0.5)
    noise: float = 0.0
    seed: int = 0

    def validate(self):
        if self.motion not in MOTIONS:
            raise InvalidSpec(f"motion must be one of {MOTIONS}, got {self.motion!r}")
        if self.frames < 2:
            raise InvalidSpec("frames must be >= 2")
        if self.components not in (1, 2):
            raise InvalidSpec("components must be 1 or 2")
        if self.n_points < 3 * self.components:
            raise InvalidSpec("need at least 3 points per component")
        lo, hi = np.asarray(self.box_min, float), np.asarray(self.box_max, float)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
            raise InvalidSpec("box_max must exceed box_min on every axis")
        if self.noise < 0:
            raise InvalidSpec("noise must be >= 0")
        vecs = [self.velocity, self.axis, self.direction]
        if self.center is not None:
            vecs.append(self.center)
        for vec in vecs:
            if np.asarray(vec, float).shape != (3,) or not np.all(np.isfinite(vec)):
                raise InvalidSpec(f"expected a finite 3-vector, got {vec!r}")
        if self.motion == "rotation" and np.linalg.norm(self.axis) == 0:
            raise InvalidSpec("rotation axis must be non-zero")
        if self.motion == "oscillation" and np.linalg.norm(self.direction) == 0:
            raise InvalidSpec("oscillation direction must be non-zero")


def _step_transforms(spec: MotionSpec, pivot):
    steps = []
    for t in range(spec.frames - 1):
        if spec.motion == "translation":
            steps.append(RigidTransform(np.eye(3), spec.velocity))
        elif spec.motion == "rotation":
            r = axis_angle_matrix(spec.axis, math.radians(spec.deg_per_frame))
            steps.append(RigidTransform(r, pivot - r @ pivot))
        else:
            d = np.asarray(spec.direction, float)
            d = d / np.linalg.norm(d)
            w = 2.0 * math.pi * spec.frequency
            step = spec.amplitude * (math.sin(w * (t + 1)) - math.sin(w * t))
            steps.append(RigidTransform(np.eye(3), step * d))
    return steps


def synthesize_scene(spec: MotionSpec):
    """Random points in a box moved by an exactly known rigid motion.

    With two components, the low-x half of the box is a static body
    (component 0) and the high-x half moves. Returns the trajectory set and
    the noise-free ground-truth prior.
    """
    from .prior import SpatPrior

    spec.validate()
    rng = np.random.default_rng(spec.seed)
    lo, hi = np.asarray(spec.box_min, float), np.asarray(spec.box_max, float)
    if spec.components == 1:
        pts = rng.uniform(lo, hi, size=(spec.n_points, 3))
        labels = np.zeros(spec.n_points, dtype=np.int64)
        moving_lo, moving_hi = lo, hi
    else:
        mid = 0.5 * (lo[0] + hi[0])
        n0 = spec.n_points // 2
        left_hi = hi.copy()
        left_hi[0] = mid
        moving_lo = lo.copy()
        moving_lo[0] = mid
        moving_hi = hi
        pts = np.vstack([
            rng.uniform(lo, left_hi, size=(n0, 3)),
            rng.uniform(moving_lo, moving_hi, size=(spec.n_points - n0, 3)),
        ])
        labels = np.r_[np.zeros(n0, np.int64), np.ones(spec.n_points - n0, np.int64)]

    pivot = np.asarray(spec.center, float) if spec.center is not None else 0.5 * (moving_lo + moving_hi)
    moving = _step_transforms(spec, pivot)
    static = [RigidTransform() for _ in moving]
    comps = [moving] if spec.components == 1 else [static, moving]

    pos = np.empty((spec.n_points, spec.frames, 3))
    pos[:, 0] = pts
    for c, seq in enumerate(comps):
        sel = labels == c
        for t, tr in enumerate(seq):
            pos[sel, t + 1] = tr.apply(pos[sel, t])
    anchors = np.array([pts[labels == c].mean(axis=0) for c in range(len(comps))])
    truth = SpatPrior(comps, anchors)
    if spec.noise > 0:
        pos = pos + rng.normal(scale=spec.noise, size=pos.shape)
    meta = {"source": "full", "scale": 1.0, "motion": spec.motion}
    return TrajectorySet(pos, labels, meta), truth

"""Explicit per-point velocity fields over a target cloud."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, ValidationError
from .prior import SpatPrior, apply_prior

EXTEND_MODES = ("loop", "pingpong")


@dataclass
class TargetCloud:
    positions: np.ndarray  # (N, 3)
    colors: np.ndarray  # (N, 3) in [0, 1]
    labels: np.ndarray  # (N,)
    radius: np.ndarray  # (N,) splat radius, scene units

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.positions)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(n, 3)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(n)
        self.radius = np.broadcast_to(np.asarray(self.radius, dtype=np.float64), (n,)).copy()
        if not np.all(np.isfinite(self.positions)):
            raise ValidationError("cloud positions must be finite")
        if n and np.any(self.radius <= 0):
            raise ValidationError("splat radius must be positive")
        if n and self.labels.min() < 0:
            raise ValidationError("labels must be >= 0")

    @classmethod
    def from_points(cls, positions, labels=None, colors=None, radius=0.01):
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        n = len(positions)
        return cls(
            positions,
            np.full((n, 3), 0.5) if colors is None else colors,
            np.zeros(n, np.int64) if labels is None else labels,
            radius,
        )

    @property
    def n_points(self):
        return len(self.positions)

    @property
    def n_components(self):
        return int(self.labels.max()) + 1 if self.n_points else 0

    def with_positions(self, positions):
        return TargetCloud(positions, self.colors, self.labels, self.radius)

    def permuted(self, order):
        return TargetCloud(self.positions[order], self.colors[order],
                           self.labels[order], self.radius[order])


@dataclass
class VelocityField:
    velocities: np.ndarray  # (T-1, N, 3), scene units per frame

    def __post_init__(self):
        self.velocities = np.asarray(self.velocities, dtype=np.float64)
        if self.velocities.ndim != 3 or self.velocities.shape[2] != 3:
            raise ValidationError(f"velocities must be (T-1, N, 3), got {self.velocities.shape}")
        if not np.all(np.isfinite(self.velocities)):
            raise ValidationError("velocities must be finite")

    @property
    def n_steps(self):
        return self.velocities.shape[0]

    @property
    def n_frames(self):
        return self.n_steps + 1

    @property
    def n_points(self):
        return self.velocities.shape[1]

    def accelerations(self):
        return np.diff(self.velocities, axis=0)

    def copy(self):
        return VelocityField(self.velocities.copy())


def compute_field(prior: SpatPrior, cloud: TargetCloud, alignment="anchored") -> VelocityField:
    """Per-step displacements of the cloud rolled forward by the prior."""
    frames = apply_prior(prior, cloud.positions, cloud.labels, alignment)
    return VelocityField(np.diff(frames, axis=0))


def integrate(cloud_or_points, field: VelocityField):
    """Euler steps ``x[t+1] = x[t] + v[t]``; returns (T, N, 3) positions."""
    start = getattr(cloud_or_points, "positions", cloud_or_points)
    start = np.asarray(start, dtype=np.float64).reshape(-1, 3)
    if field.n_points != len(start):
        raise DimensionMismatch(f"field has {field.n_points} points, cloud has {len(start)}")
    stacked = np.concatenate([start[None], field.velocities], axis=0)
    # cumsum accumulates sequentially in t, i.e. exactly the Euler loop
    return np.cumsum(stacked, axis=0)


def scale_field(field: VelocityField, factor) -> VelocityField:
    factor = float(factor)
    if not np.isfinite(factor):
        raise ValidationError("scale factor must be finite")
    return VelocityField(field.velocities * factor)


def extend_field(field: VelocityField, repeats=1, mode="loop") -> VelocityField:
    """Repeat a field in time.

    ``loop`` concatenates ``repeats`` copies. ``pingpong`` makes ``repeats``
    out-and-back cycles, each the original followed by its time-reversed,
    negated copy, so the cloud returns to its start after every cycle.
    """
    if repeats < 1:
        raise ValidationError("repeats must be >= 1")
    if mode == "loop":
        return VelocityField(np.concatenate([field.velocities] * repeats, axis=0))
    if mode == "pingpong":
        back = -field.velocities[::-1]
        return VelocityField(np.concatenate([field.velocities, back] * repeats, axis=0))
    raise ValidationError(f"mode must be one of {EXTEND_MODES}, got {mode!r}")

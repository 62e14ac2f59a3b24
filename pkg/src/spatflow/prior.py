"""Per-component sequences of rigid step transforms and their application to
arbitrary point sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfiguration, LabelOutOfRange, TooFewPoints, ValidationError
from .geometry import RigidTransform, umeyama_align
from .trajectory import TrajectorySet

ALIGNMENTS = ("anchored", "raw")


@dataclass
class SpatPrior:
    """``components[c][t]`` maps component ``c`` from frame ``t`` to ``t + 1``.

    ``anchors[c]`` is the first-frame centroid of the points the component
    was fitted on. ``scale`` records the normalization factor of the source
    scene (1.0 when unnormalized).
    """

    components: list
    anchors: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        self.anchors = np.asarray(self.anchors, dtype=np.float64).reshape(-1, 3)
        if not self.components:
            raise ValidationError("a prior needs at least one component")
        lengths = {len(seq) for seq in self.components}
        if len(lengths) != 1 or 0 in lengths:
            raise ValidationError("all component sequences must share a length >= 1")
        if len(self.anchors) != len(self.components):
            raise ValidationError("one anchor per component required")

    @property
    def n_components(self):
        return len(self.components)

    @property
    def n_frames(self):
        return len(self.components[0]) + 1

    def rotations(self, c):
        return np.stack([tr.rotation for tr in self.components[c]])

    def translations(self, c):
        return np.stack([tr.translation for tr in self.components[c]])


def build_prior(trajs: TrajectorySet) -> SpatPrior:
    """Fit one rigid transform per consecutive frame pair and component.

    Each step is fitted independently on that component's trajectory points;
    nothing is chained from the first frame.
    """
    comps, anchors = [], []
    for c in range(trajs.n_components):
        pts = trajs.positions[trajs.labels == c]
        if len(pts) < 3:
            err = TooFewPoints(f"component {c}: {len(pts)} trajectories, need >= 3")
            err.component, err.frame = c, 0
            raise err
        seq = []
        for t in range(trajs.n_frames - 1):
            try:
                seq.append(umeyama_align(pts[:, t], pts[:, t + 1]))
            except (TooFewPoints, DegenerateConfiguration) as exc:
                err = type(exc)(f"component {c}, frame {t}: {exc}")
                err.component, err.frame = c, t
                raise err from exc
        comps.append(seq)
        anchors.append(pts[:, 0].mean(axis=0))
    return SpatPrior(comps, np.array(anchors), float(trajs.meta.get("scale", 1.0)))


def fit_residuals(prior: SpatPrior, trajs: TrajectorySet):
    """RMS residual of every step fit, shape (C, T-1)."""
    out = np.zeros((prior.n_components, prior.n_frames - 1))
    for c, seq in enumerate(prior.components):
        pts = trajs.positions[trajs.labels == c]
        for t, tr in enumerate(seq):
            d = tr.apply(pts[:, t]) - pts[:, t + 1]
            out[c, t] = np.sqrt(np.mean(np.sum(d * d, axis=1)))
    return out


def apply_prior(prior: SpatPrior, points, labels, alignment="anchored"):
    """Roll ``points`` forward through the prior; returns (T, N, 3) positions.

    With ``alignment="anchored"`` each target component's first-frame
    centroid is moved onto the source anchor before the step transforms are
    applied and moved back afterwards, so the result does not depend on where
    the target sits. ``"raw"`` applies the transforms literally.
    """
    if alignment not in ALIGNMENTS:
        raise ValidationError(f"alignment must be one of {ALIGNMENTS}")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(labels) != len(pts):
        raise ValidationError("one label per point required")
    if len(labels) and (labels.min() < 0 or labels.max() >= prior.n_components):
        raise LabelOutOfRange(
            f"labels span [{labels.min()}, {labels.max()}], prior has "
            f"{prior.n_components} component(s)"
        )

    out = np.empty((prior.n_frames, len(pts), 3))
    out[0] = pts
    for c in range(prior.n_components):
        sel = labels == c
        if not sel.any():
            continue
        p = pts[sel]
        shift = prior.anchors[c] - p.mean(axis=0) if alignment == "anchored" else np.zeros(3)
        cur = p
        for t, tr in enumerate(prior.components[c]):
            # x -> R(x + s) + d - s, folded so identity steps are exact
            r = tr.rotation
            cur = cur @ r.T + ((r @ shift - shift) + tr.translation)
            out[t + 1, sel] = cur
    return out


def identity_prior(n_frames, n_components=1):
    comps = [[RigidTransform() for _ in range(n_frames - 1)] for _ in range(n_components)]
    return SpatPrior(comps, np.zeros((n_components, 3)))

"""Rigid motion priors from point trajectories, transferred onto point clouds."""

from .geometry import CameraModel, RigidTransform, umeyama_align
from .prior import SpatPrior, apply_prior, build_prior
from .refine import RefinementConfig, build_graph, refine
from .trajectory import MotionSpec, TrajectorySet, synthesize_scene
from .velocity import TargetCloud, VelocityField, compute_field, integrate

__version__ = "0.1.0"

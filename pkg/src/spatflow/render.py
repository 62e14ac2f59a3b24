"""Point-splat rendering and full-reference image metrics."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._parallel import pmap
from .errors import DimensionMismatch, EmptySequence, TooSmall, ValidationError
from .geometry import CameraModel, RigidTransform, axis_angle_matrix

WHITE = (255, 255, 255)
PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DATA_RANGE = 255.0


# ---------------------------------------------------------------------------
# Cameras for rendering


def default_camera(points, width=256, height=256, distance_factor=2.5):
    """Fixed camera on the -z side of ``points`` looking along +z.

    The camera sits ``distance_factor`` bounding-box diagonals from the
    centroid with a focal length equal to the image width.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts):
        centre = pts.mean(axis=0)
        diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    else:
        centre, diag = np.zeros(3), 0.0
    diag = diag if diag > 0 else 1.0
    pose = RigidTransform(np.eye(3), centre - np.array([0.0, 0.0, distance_factor * diag]))
    return CameraModel.from_params(width, width, width / 2, height / 2, width, height, pose)


def fixed_path(camera: CameraModel, n_frames):
    return [camera] * n_frames


def orbit_path(camera: CameraModel, target, n_frames, degrees=30.0, axis=(0.0, 1.0, 0.0)):
    """Camera path that swings the camera ``degrees`` about ``target``."""
    target = np.asarray(target, dtype=np.float64)
    path = []
    for i in range(n_frames):
        frac = i / max(n_frames - 1, 1)
        rot = axis_angle_matrix(axis, math.radians(degrees) * frac)
        pose = RigidTransform(rot @ camera.pose.rotation,
                              target + rot @ (camera.pose.translation - target))
        path.append(camera.with_pose(pose))
    return path


# ---------------------------------------------------------------------------
# Rasterization


def rasterize(points, colors, radius, camera: CameraModel, background=WHITE):
    """Draw every point as a filled disk with a per-pixel depth test.

    A pixel ``(x, y)`` (centre at integer coordinates) is covered when it
    lies within ``fx * radius / z`` of the projected centre. The nearest point
    wins; equal depths go to the lower point index.
    """
    h, w = camera.height, camera.width
    image = np.empty((h, w, 3), dtype=np.uint8)
    image[:] = np.asarray(background, dtype=np.uint8)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not len(pts):
        return image
    rgb = np.clip(np.rint(np.asarray(colors, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    radius = np.broadcast_to(np.asarray(radius, dtype=np.float64), (len(pts),))

    u, v, z = camera.project_many(pts)
    ok = z > 0
    r = np.zeros_like(z)
    r[ok] = camera.fx * radius[ok] / z[ok]
    r = np.minimum(r, float(max(w, h)))
    ok &= (u + r >= 0) & (u - r <= w - 1) & (v + r >= 0) & (v - r <= h - 1)
    idx = np.flatnonzero(ok)
    if not len(idx):
        return image
    ext = np.ceil(r[idx]).astype(np.int64)

    pix_parts, depth_parts, id_parts = [], [], []
    for e in np.unique(ext):
        sel = idx[ext == e]
        off = np.arange(-e, e + 2)
        ox, oy = np.meshgrid(off, off)
        ox, oy = ox.reshape(-1), oy.reshape(-1)
        px = np.floor(u[sel])[:, None].astype(np.int64) + ox[None]
        py = np.floor(v[sel])[:, None].astype(np.int64) + oy[None]
        dx = px - u[sel][:, None]
        dy = py - v[sel][:, None]
        hit = (dx * dx + dy * dy <= (r[sel] ** 2)[:, None]) & (px >= 0) & (px < w) & (py >= 0) & (py < h)
        rows, cols = np.nonzero(hit)
        pix_parts.append(py[rows, cols] * w + px[rows, cols])
        depth_parts.append(z[sel][rows])
        id_parts.append(sel[rows])
    pix = np.concatenate(pix_parts)
    if not len(pix):
        return image
    depth = np.concatenate(depth_parts)
    ids = np.concatenate(id_parts)
    order = np.lexsort((ids, depth, pix))
    pix, ids = pix[order], ids[order]
    first = np.ones(len(pix), dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    flat = image.reshape(-1, 3)
    flat[pix[first]] = rgb[ids[first]]
    return image


def render(positions, cloud, path, background=WHITE, threads=None):
    """Render a (T, N, 3) position sequence with the cloud's colours and radii.

    ``path`` is either one camera (used for every frame) or a list with one
    camera per frame.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 3 or positions.shape[0] == 0:
        raise EmptySequence("nothing to render")
    n_frames = positions.shape[0]
    if isinstance(path, CameraModel):
        path = fixed_path(path, n_frames)
    if len(path) != n_frames:
        raise ValidationError(f"camera path has {len(path)} poses for {n_frames} frames")
    if positions.shape[1] != cloud.n_points:
        raise DimensionMismatch("positions and cloud disagree on point count")
    return pmap(
        lambda t: rasterize(positions[t], cloud.colors, cloud.radius, path[t], background),
        range(n_frames),
        threads,
    )


# ---------------------------------------------------------------------------
# Metrics


def _check_pair(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"frame shapes differ: {a.shape} vs {b.shape}")
    return a.astype(np.float64), b.astype(np.float64)


def psnr(a, b):
    """Peak signal-to-noise ratio in dB over all channels, capped at 99 dB."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(DATA_RANGE**2 / mse))


def luma(image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    return image[..., 0] * 0.299 + image[..., 1] * 0.587 + image[..., 2] * 0.114


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    n = len(g)
    tmp = sliding_window_view(img, n, axis=1) @ g
    return sliding_window_view(tmp, n, axis=0) @ g


def ssim(a, b):
    """Single-scale SSIM on luma with an 11x11 Gaussian window (sigma 1.5).

    Statistics are taken over every fully contained window position and the
    SSIM map is averaged.
    """
    a, b = _check_pair(a, b)
    a, b = luma(a), luma(b)
    if min(a.shape) < SSIM_WINDOW:
        raise TooSmall(f"SSIM needs both sides >= {SSIM_WINDOW}, got {a.shape}")
    g = gaussian_window()
    c1 = (SSIM_K1 * DATA_RANGE) ** 2
    c2 = (SSIM_K2 * DATA_RANGE) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def compare_sequences(frames, reference):
    """Per-frame ``(index, psnr, ssim)`` rows for two equal-length sequences."""
    if len(frames) != len(reference):
        raise DimensionMismatch(f"{len(frames)} frames vs {len(reference)} reference frames")
    return [(i, psnr(a, b), ssim(a, b)) for i, (a, b) in enumerate(zip(frames, reference))]

"""Naive reference implementations used only by the tests.

Everything here is written for clarity, with plain loops and LAPACK where
convenient, and shares no code with the package.
"""

import math

import numpy as np


def rot_z(deg):
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def kabsch(src, dst):
    """Rigid least-squares fit via numpy's LAPACK SVD."""
    sc, dc = src.mean(axis=0), dst.mean(axis=0)
    h = (src - sc).T @ (dst - dc)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return r, dc - r @ sc


def rigid_cost(r, t, src, dst):
    return float(np.sum((dst - (src @ r.T + t)) ** 2))


def sqdist(a, b):
    dx, dy, dz = a[0] - b[0], a[1] - b[1], a[2] - b[2]
    return dx * dx + dy * dy + dz * dz


def knn_bruteforce(points, k):
    """Symmetrized k-NN lists, each sorted by (squared distance, index)."""
    pts = [tuple(map(float, p)) for p in points]
    n = len(pts)
    nbr = [set() for _ in range(n)]
    for i in range(n):
        cand = sorted((sqdist(pts[i], pts[j]), j) for j in range(n) if j != i)
        for _, j in cand[:k]:
            nbr[i].add(j)
            nbr[j].add(i)
    return [sorted(nbr[i], key=lambda j: (sqdist(pts[i], pts[j]), j)) for i in range(n)]


def kinematic_loss_naive(v, nbrs, t):
    """Double loop over (i, j in N(i)); ``t`` is 1-based, v is (T-1, N, 3)."""
    steps = len(v)
    total = 0.0
    s = t - 1
    for i, row in enumerate(nbrs):
        for j in row:
            dv = v[s][i] - v[s][j]
            total += float(dv @ dv)
            if s + 1 < steps:
                da = (v[s + 1][i] - v[s][i]) - (v[s + 1][j] - v[s][j])
                total += float(da @ da)
    return total


def topological_loss_naive(v, boundary, nbrs, t):
    if not len(boundary):
        return 0.0
    x = v[t - 1]
    total = 0.0
    for i in boundary:
        mean = np.zeros(3)
        for j in nbrs[i]:
            mean += x[j]
        mean /= len(nbrs[i])
        d = x[i] - mean
        total += float(d @ d)
    return total / len(boundary)


def cross_label_scan(nbrs, labels):
    return sorted(i for i, row in enumerate(nbrs) if any(labels[j] != labels[i] for j in row))


def flood_fill_naive(nbrs, labels, seeds, hops):
    """Relax node costs to a fixed point (Bellman-Ford style).

    Entering a boundary node is free, any other node costs one hop; nodes with
    cost <= hops are reached and the boundary ones among them are kept.
    """
    n = len(nbrs)
    on_b = [any(labels[j] != labels[i] for j in nbrs[i]) for i in range(n)]
    inf = float("inf")
    cost = [inf] * n
    for s in seeds:
        cost[s] = 0
    changed = True
    while changed:
        changed = False
        for i in range(n):
            if cost[i] == inf:
                continue
            for j in nbrs[i]:
                c = cost[i] + (0 if on_b[j] else 1)
                if c <= hops and c < cost[j]:
                    cost[j] = c
                    changed = True
    return sorted(i for i in range(n) if on_b[i] and cost[i] <= hops)


def geodesic_labels_naive(points, nbrs, seeds, seed_labels):
    """Bellman-Ford distances from every seed; each point takes the label of
    the closest seed (earliest seed on ties)."""
    n = len(points)
    best = []
    for s in seeds:
        dist = [math.inf] * n
        dist[s] = 0.0
        for _ in range(n):
            changed = False
            for i in range(n):
                for j in nbrs[i]:
                    d = dist[i] + math.sqrt(sqdist(points[i], points[j]))
                    if d < dist[j]:
                        dist[j] = d
                        changed = True
            if not changed:
                break
        best.append(dist)
    return [seed_labels[min(range(len(seeds)), key=lambda r: (best[r][i], r))] for i in range(n)]


def rasterize_naive(points, colors, radius, fx, fy, cx, cy, width, height, cam_t, background):
    """Per-pixel loop over points with an identity-rotation camera at ``cam_t``."""
    img = np.empty((height, width, 3), dtype=np.uint8)
    img[:] = background
    best = np.full((height, width), np.inf)
    for idx, p in enumerate(points):
        x, y, z = np.asarray(p, float) - cam_t
        if z <= 0:
            continue
        u, v = fx * x / z + cx, fy * y / z + cy
        r = fx * radius[idx] / z
        for py in range(height):
            for px in range(width):
                if (px - u) ** 2 + (py - v) ** 2 <= r * r and z < best[py, px]:
                    best[py, px] = z
                    img[py, px] = np.clip(np.rint(np.asarray(colors[idx]) * 255), 0, 255)
    return img

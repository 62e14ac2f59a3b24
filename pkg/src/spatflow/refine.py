"""Smoothing of velocity fields on a k-nearest-neighbour graph.

The graph is stored as flat CSR-style arrays (``indptr``, ``indices``) with
each row ordered by (squared distance, index). Every neighbour reduction
walks a row in that stored order, which makes the results independent of how
points are numbered: permuting the input permutes the output bit for bit.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ._parallel import pmap
from .errors import DimensionMismatch, EmptyCloud, IndexOutOfRange, InvalidSeed, ValidationError
from .velocity import VelocityField

DEFAULT_NEIGHBORS = 2048
DEFAULT_SWEEPS = 5
DEFAULT_EPSILON = 1e-5
DEFAULT_HOPS = 3
STATIC_MODES = ("global", "neighborhood")

_TIE_RTOL = 1e-9


@dataclass
class NeighborGraph:
    indptr: np.ndarray
    indices: np.ndarray
    sqdist: np.ndarray
    k: int

    def __post_init__(self):
        self.indptr = np.asarray(self.indptr, dtype=np.int64)
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.sqdist = np.asarray(self.sqdist, dtype=np.float64)
        self.degree = np.diff(self.indptr)
        self.rows = np.repeat(np.arange(self.n_points), self.degree)
        upper = self.rows < self.indices
        self.edge_i = self.rows[upper]
        self.edge_j = self.indices[upper]

    @property
    def n_points(self):
        return len(self.indptr) - 1

    @property
    def n_edges(self):
        return len(self.indices)

    def neighbors(self, i):
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def neighbor_lists(self):
        return [self.neighbors(i).tolist() for i in range(self.n_points)]

    def neighbor_sum(self, values):
        """Row-wise sum of ``values[j]`` over each point's neighbours."""
        values = np.asarray(values)
        out = np.zeros((self.n_points,) + values.shape[1:], dtype=np.result_type(values, np.float64))
        has = self.degree > 0
        if self.n_edges:
            sums = np.add.reduceat(values[self.indices], self.indptr[:-1][has], axis=0)
            out[has] = sums
        return out

    def neighbor_mean(self, values):
        d = np.maximum(self.degree, 1).reshape((-1,) + (1,) * (np.ndim(values) - 1))
        return self.neighbor_sum(values) / d


def _sorted_rows(src, dst, d2, n):
    order = np.lexsort((dst, d2, src))
    src, dst, d2 = src[order], dst[order], d2[order]
    keep = np.ones(len(src), dtype=bool)
    keep[1:] = (src[1:] != src[:-1]) | (dst[1:] != dst[:-1])
    # duplicates share d2, so they are adjacent after the sort
    src, dst, d2 = src[keep], dst[keep], d2[keep]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    return np.cumsum(indptr), dst, d2


def _sqdist(pos, i, j):
    diff = pos[i] - pos[j]
    return np.sum(diff * diff, axis=-1)


def _complete_rows(pos):
    n = len(pos)
    src = np.repeat(np.arange(n), n - 1)
    dst = np.concatenate([np.r_[0:i, i + 1 : n] for i in range(n)])
    return src, dst


def _knn_rows(pos, k):
    """Directed k-NN edges with ties broken by ascending index."""
    n = len(pos)
    tree = cKDTree(pos)
    q = min(k + 2, n)
    _, cand = tree.query(pos, k=q)
    cand = np.asarray(cand, dtype=np.int64).reshape(n, q)
    me = np.arange(n)[:, None]
    is_self = cand == me
    no_self = ~is_self.any(axis=1)
    is_self[no_self, -1] = True  # drop the farthest when self was crowded out
    cand = cand[~is_self].reshape(n, q - 1)
    d2 = _sqdist(pos, me, cand)
    order = _rowwise_order(cand, d2)
    cand = np.take_along_axis(cand, order, axis=1)
    d2 = np.take_along_axis(d2, order, axis=1)

    src = [np.repeat(np.arange(n), k)]
    dst = [cand[:, :k].reshape(-1)]
    if q - 1 > k:
        kth = d2[:, k - 1]
        ambiguous = d2[:, k] <= kth * (1 + _TIE_RTOL) + 1e-300
    else:
        ambiguous = np.zeros(n, dtype=bool)
    amb = np.flatnonzero(ambiguous)
    if len(amb):
        keep = ~np.isin(src[0], amb)
        src[0], dst[0] = src[0][keep], dst[0][keep]
        radius = np.sqrt(d2[amb, k - 1]) * (1 + 1e-6) + 1e-150
        balls = tree.query_ball_point(pos[amb], radius)
        for i, ball in zip(amb, balls):
            ball = np.asarray([j for j in ball if j != i], dtype=np.int64)
            bd = _sqdist(pos, i, ball)
            pick = ball[np.lexsort((ball, bd))[:k]]
            src.append(np.full(len(pick), i, dtype=np.int64))
            dst.append(pick)
    return np.concatenate(src), np.concatenate(dst)


def _rowwise_order(keys_idx, keys_d2):
    # lexsort each row by (d2, index) in one vectorized pass
    n, m = keys_idx.shape
    flat_rows = np.repeat(np.arange(n), m)
    order = np.lexsort((keys_idx.reshape(-1), keys_d2.reshape(-1), flat_rows))
    return (order - flat_rows * m).reshape(n, m)


def build_graph(points, k=DEFAULT_NEIGHBORS) -> NeighborGraph:
    """Exact k-nearest-neighbour graph on first-frame positions.

    Ties are broken by ascending point index, then the edge set is closed
    under symmetry, so a point may end up with more than ``k`` neighbours.
    When ``k >= N - 1`` the result is the complete graph.
    """
    pos = getattr(points, "positions", points)
    pos = np.asarray(pos, dtype=np.float64).reshape(-1, 3)
    n = len(pos)
    if k < 1:
        raise ValidationError("k must be >= 1")
    if n < 2:
        raise EmptyCloud(f"need at least 2 points to build a graph, got {n}")
    kk = min(int(k), n - 1)
    if kk == n - 1:
        src, dst = _complete_rows(pos)
    else:
        src, dst = _knn_rows(pos, kk)
    s = np.concatenate([src, dst])
    d = np.concatenate([dst, src])
    indptr, indices, d2 = _sorted_rows(s, d, _sqdist(pos, s, d), n)
    return NeighborGraph(indptr, indices, d2, int(k))


# ---------------------------------------------------------------------------
# Losses


def _check_step(field: VelocityField, t):
    if not 1 <= t <= field.n_steps:
        raise IndexOutOfRange(f"step {t} outside [1, {field.n_steps}]")
    return t - 1


def _edge_energy(graph, x):
    diff = x[graph.edge_i] - x[graph.edge_j]
    return 2.0 * float(np.sum(diff * diff))


def kinematic_loss(field: VelocityField, graph: NeighborGraph, t) -> float:
    """Neighbour disagreement of velocity and acceleration at step ``t``.

    ``t`` runs from 1 to ``T - 1`` over the velocity steps; the acceleration
    term ``a[t] = v[t+1] - v[t]`` is absent at the last step. Each undirected
    edge is counted from both ends.
    """
    t = _check_step(field, t)
    if graph.n_points != field.n_points:
        raise DimensionMismatch("graph and field sizes differ")
    v = field.velocities
    loss = _edge_energy(graph, v[t])
    if t < field.n_steps - 1:
        loss += _edge_energy(graph, v[t + 1] - v[t])
    return loss


@dataclass
class BoundarySet:
    indices: np.ndarray
    seeds: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    def __post_init__(self):
        self.indices = np.unique(np.asarray(self.indices, dtype=np.int64))
        self.seeds = np.asarray(self.seeds, dtype=np.int64).reshape(-1)

    def __len__(self):
        return len(self.indices)

    def mask(self, n):
        m = np.zeros(n, dtype=bool)
        m[self.indices] = True
        return m


def topological_loss(field: VelocityField, boundary: BoundarySet, graph: NeighborGraph, t) -> float:
    """Mean squared gap between each boundary velocity and its neighbour mean
    at step ``t`` (1-based)."""
    t = _check_step(field, t)
    m = len(boundary)
    if m == 0:
        return 0.0
    v = field.velocities[t]
    b = boundary.indices
    r = v[b] - graph.neighbor_mean(v)[b]
    return float(np.sum(r * r)) / m


def cross_label_mask(graph: NeighborGraph, labels):
    """True for points with at least one neighbour of a different label."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros(graph.n_points, dtype=bool)
    out[graph.rows[labels[graph.rows] != labels[graph.indices]]] = True
    return out


def flood_fill_boundary(graph: NeighborGraph, labels, seeds, hops=DEFAULT_HOPS) -> BoundarySet:
    """Motion-boundary points reachable from ``seeds``.

    A boundary point is one with a neighbour of another component. The fill
    spreads freely along boundary points and may cross at most ``hops``
    non-boundary points to reach them (so a seed need not lie exactly on the
    boundary, and nearby boundary fragments are bridged).
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = graph.n_points
    if len(labels) != n:
        raise DimensionMismatch("one label per graph node required")
    if hops < 1:
        raise ValidationError("hops must be >= 1")
    seeds = np.asarray(seeds, dtype=np.int64).reshape(-1)
    bad = seeds[(seeds < 0) | (seeds >= n)]
    if len(bad):
        raise InvalidSeed(f"seed indices out of range: {bad.tolist()}")

    on_boundary = cross_label_mask(graph, labels)
    cost = np.full(n, np.iinfo(np.int64).max)
    queue = deque()
    for s in seeds:
        if cost[s] > 0:
            cost[s] = 0
            queue.append(s)
    # 0-1 BFS: boundary nodes cost nothing to enter, others one hop
    while queue:
        i = queue.popleft()
        ci = cost[i]
        for j in graph.neighbors(i):
            step = 0 if on_boundary[j] else 1
            cj = ci + step
            if cj <= hops and cj < cost[j]:
                cost[j] = cj
                if step == 0:
                    queue.appendleft(j)
                else:
                    queue.append(j)
    reached = cost <= hops
    return BoundarySet(np.flatnonzero(reached & on_boundary), seeds)


# ---------------------------------------------------------------------------
# Relaxation


@dataclass
class RefinementConfig:
    lambda_topo: float = 1.0
    lambda_kin: float = 1.0
    sweeps: int = DEFAULT_SWEEPS
    damping: float = 0.5
    epsilon: float = DEFAULT_EPSILON

    def validate(self):
        if self.lambda_topo < 0 or self.lambda_kin < 0:
            raise ValidationError("loss weights must be >= 0")
        if int(self.sweeps) != self.sweeps or self.sweeps < 0:
            raise ValidationError("sweeps must be a non-negative integer")
        if not 0 < self.damping <= 1:
            raise ValidationError("damping must lie in (0, 1]")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be > 0")
        return self


@dataclass
class LossTrace:
    """Per-step losses; ``per_step[s, t] = (kin, topo, weighted total)``.

    Row 0 is the input field, row ``s`` the field after sweep ``s``.
    """

    per_step: np.ndarray

    @property
    def totals(self):
        return self.per_step[:, :, 2].sum(axis=1)

    def rows(self):
        for s, block in enumerate(self.per_step):
            for t, (kin, topo, total) in enumerate(block, 1):
                yield s, t, float(kin), float(topo), float(total)


def _losses(v, graph, boundary, cfg, threads):
    n_steps = len(v)
    b = boundary.indices

    def one(t):
        kin = _edge_energy(graph, v[t])
        if t < n_steps - 1:
            kin += _edge_energy(graph, v[t + 1] - v[t])
        topo = 0.0
        if len(b):
            r = v[t][b] - graph.neighbor_mean(v[t])[b]
            topo = float(np.sum(r * r)) / len(b)
        return kin, topo, cfg.lambda_topo * topo + cfg.lambda_kin * kin

    return np.array(pmap(one, range(n_steps), threads))


def refine(field: VelocityField, graph: NeighborGraph, boundary: BoundarySet,
           config: RefinementConfig | None = None, threads=None):
    """Damped Jacobi relaxation of the combined kinematic + topological loss.

    Every sweep moves each velocity ``v[t, i]`` a fraction ``damping`` of the
    way towards the exact minimizer of the total loss in that single variable,
    all updates being computed from the previous sweep's field. The minimizer
    accounts for neighbour velocities, the neighbouring time steps through the
    acceleration terms, and, on and around boundary points, the topological
    term. Returns the refined field and a ``LossTrace``.
    """
    cfg = (config or RefinementConfig()).validate()
    if graph.n_points != field.n_points:
        raise DimensionMismatch(f"graph has {graph.n_points} nodes, field {field.n_points} points")
    if len(boundary) and boundary.indices.max() >= field.n_points:
        raise DimensionMismatch("boundary index beyond field size")

    v = field.velocities.copy()
    n_steps, n = v.shape[:2]
    deg = graph.degree.astype(np.float64)
    deg_col = deg[:, None]
    lk, lt = float(cfg.lambda_kin), float(cfg.lambda_topo)
    m = len(boundary)
    use_topo = m > 0 and lt > 0
    if use_topo:
        b = boundary.indices
        on_b = boundary.mask(n)
        inv_deg = np.where(deg > 0, 1.0 / np.maximum(deg, 1), 0.0)
        topo_w = 2.0 / m
        topo_diag = topo_w * (on_b + graph.neighbor_sum(on_b * inv_deg * inv_deg))

    traces = [_losses(v, graph, boundary, cfg, threads)]
    for _ in range(int(cfg.sweeps)):
        sums = pmap(lambda t: graph.neighbor_sum(v[t]), range(n_steps), threads)

        def update(t, v=v, sums=sums):
            x = v[t]
            g = 4.0 * lk * (deg_col * x - sums[t])
            n_acc = 0
            if t < n_steps - 1:
                acc = v[t + 1] - x
                g -= 4.0 * lk * (deg_col * acc - (sums[t + 1] - sums[t]))
                n_acc += 1
            if t > 0:
                acc = x - v[t - 1]
                g += 4.0 * lk * (deg_col * acc - (sums[t] - sums[t - 1]))
                n_acc += 1
            diag = 4.0 * lk * deg * (1 + n_acc)
            if use_topo:
                r = x[b] - sums[t][b] * inv_deg[b, None]
                g[b] += lt * topo_w * r
                w = np.zeros_like(x)
                w[b] = r * inv_deg[b, None]
                g -= lt * topo_w * graph.neighbor_sum(w)
                diag = diag + lt * topo_diag
            step = np.zeros_like(x)
            ok = diag > 0
            step[ok] = g[ok] / diag[ok, None]
            return x - cfg.damping * step

        v = np.stack(pmap(update, range(n_steps), threads))
        traces.append(_losses(v, graph, boundary, cfg, threads))
    return VelocityField(v), LossTrace(np.stack(traces))


def propagate_static(field: VelocityField, epsilon=DEFAULT_EPSILON, mode="neighborhood",
                     graph: NeighborGraph | None = None) -> VelocityField:
    """Give near-static points a pseudo-velocity borrowed from moving ones.

    Per step ``t``, points with speed below ``epsilon`` are static. In
    ``global`` mode every static point takes the mean velocity of all dynamic
    points. In ``neighborhood`` mode a static point takes the mean of its
    dynamic graph neighbours and is left alone when it has none.
    """
    if not epsilon > 0:
        raise ValidationError("epsilon must be > 0")
    if mode not in STATIC_MODES:
        raise ValidationError(f"mode must be one of {STATIC_MODES}, got {mode!r}")
    if mode == "neighborhood":
        if graph is None:
            raise ValidationError("neighborhood mode needs a graph")
        if graph.n_points != field.n_points:
            raise DimensionMismatch("graph and field sizes differ")
    out = field.velocities.copy()
    for t in range(field.n_steps):
        v = field.velocities[t]
        static = np.linalg.norm(v, axis=1) < epsilon
        dynamic = ~static
        if not dynamic.any() or not static.any():
            continue
        if mode == "global":
            out[t, static] = v[dynamic].mean(axis=0)
        else:
            count = graph.neighbor_sum(dynamic.astype(np.float64))
            total = graph.neighbor_sum(v * dynamic[:, None])
            fill = static & (count > 0)
            out[t, fill] = total[fill] / count[fill, None]
    return VelocityField(out)

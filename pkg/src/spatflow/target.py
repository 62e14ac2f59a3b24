"""Target point clouds: PLY input/output, normalization and component labels."""

from __future__ import annotations

import heapq
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateCloud, InvalidSeed, ParseError, ValidationError
from .refine import NeighborGraph, build_graph
from .velocity import TargetCloud

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}
_KNOWN = {"x", "y", "z", "red", "green", "blue", "label", "radius"}
DEFAULT_GRAY = 0.5
DEFAULT_RADIUS_FRACTION = 0.01


class UnsupportedPropertyWarning(UserWarning):
    pass


def _parse_header(data, path):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ParseError("missing 'ply' magic or 'end_header'", f"{path}: line 1")
    nl = data.find(b"\n", end)
    body_start = len(data) if nl < 0 else nl + 1
    lines = data[:end].decode("ascii", errors="replace").splitlines()
    fmt, elements, current = None, [], None
    for lineno, line in enumerate(lines, 1):
        parts = line.split()
        if not parts or parts[0] in ("ply", "comment", "obj_info"):
            continue
        if parts[0] == "format":
            if len(parts) != 3 or parts[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"unsupported format line {line!r}", f"{path}: line {lineno}")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3 or not parts[2].isdigit():
                raise ParseError(f"bad element line {line!r}", f"{path}: line {lineno}")
            current = {"name": parts[1], "count": int(parts[2]), "props": []}
            elements.append(current)
        elif parts[0] == "property":
            if current is None:
                raise ParseError("property before any element", f"{path}: line {lineno}")
            if parts[1] == "list":
                if len(parts) != 5 or parts[2] not in _PLY_TYPES or parts[3] not in _PLY_TYPES:
                    raise ParseError(f"bad list property {line!r}", f"{path}: line {lineno}")
                current["props"].append((parts[4], "list", _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]]))
            else:
                if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                    raise ParseError(f"bad property line {line!r}", f"{path}: line {lineno}")
                current["props"].append((parts[2], _PLY_TYPES[parts[1]]))
        else:
            raise ParseError(f"unknown header keyword {parts[0]!r}", f"{path}: line {lineno}")
    if fmt is None:
        raise ParseError("missing format line", f"{path}: header")
    return fmt, elements, body_start, len(lines) + 1


def _read_vertices(path):
    data = Path(path).read_bytes()
    fmt, elements, start, header_lines = _parse_header(data, path)
    names = [e["name"] for e in elements]
    if "vertex" not in names:
        raise ParseError("no vertex element", f"{path}: header")

    if fmt == "ascii":
        lines = data[start:].decode("ascii", errors="replace").splitlines()
        lineno = 0
        out = None
        for el in elements:
            rows = []
            for _ in range(el["count"]):
                if lineno >= len(lines):
                    raise ParseError("unexpected end of file", f"{path}: line {header_lines + lineno + 1}")
                tokens = lines[lineno].split()
                lineno += 1
                if any(len(p) == 4 for p in el["props"]):
                    continue  # list elements (faces) are skipped
                if len(tokens) != len(el["props"]):
                    raise ParseError(
                        f"expected {len(el['props'])} values, got {len(tokens)}",
                        f"{path}: line {header_lines + lineno}",
                    )
                try:
                    rows.append([float(t) for t in tokens])
                except ValueError:
                    raise ParseError("non-numeric value", f"{path}: line {header_lines + lineno}") from None
            if el["name"] == "vertex":
                arr = np.array(rows, dtype=np.float64).reshape(el["count"], len(el["props"]))
                out = {p[0]: arr[:, i] for i, p in enumerate(el["props"])}
                types = {p[0]: p[1] for p in el["props"]}
        return out, types

    offset = start
    for el in elements:
        if any(len(p) == 4 for p in el["props"]):
            if el["name"] == "vertex":
                raise ParseError("list properties on vertices are not supported", f"{path}: header")
            raise ParseError("binary list elements are not supported", f"{path}: header")
        dtype = np.dtype([(p[0], "<" + p[1]) for p in el["props"]])
        need = dtype.itemsize * el["count"]
        if offset + need > len(data):
            raise ParseError("binary payload truncated", f"{path}: offset {offset}")
        arr = np.frombuffer(data, dtype=dtype, count=el["count"], offset=offset)
        offset += need
        if el["name"] == "vertex":
            types = {p[0]: p[1] for p in el["props"]}
            return {name: arr[name].astype(np.float64) for name in dtype.names}, types
    raise ParseError("no vertex element", f"{path}: header")


def load_cloud(path, warn_list=None) -> TargetCloud:
    """Read a PLY point cloud (ascii or binary little-endian).

    Recognized vertex properties: x, y, z, red, green, blue, label, radius.
    Colours stored as integers are taken to be 0..255. Missing colours become
    mid-gray, missing labels 0 and missing radii 1% of the bounding-box
    diagonal. Other properties are ignored and reported through
    ``warn_list`` (or a ``UnsupportedPropertyWarning``).
    """
    props, types = _read_vertices(path)
    for axis in "xyz":
        if axis not in props:
            raise ParseError(f"vertex property {axis!r} missing", f"{path}: header")
    unsupported = sorted(set(props) - _KNOWN)
    if unsupported:
        if warn_list is not None:
            warn_list.extend(unsupported)
        else:
            warnings.warn(f"{path}: ignoring properties {unsupported}", UnsupportedPropertyWarning)

    pos = np.stack([props["x"], props["y"], props["z"]], axis=1)
    n = len(pos)
    if all(c in props for c in ("red", "green", "blue")):
        rgb = np.stack([props["red"], props["green"], props["blue"]], axis=1)
        colors = rgb if types["red"].startswith("f") else rgb / 255.0
    else:
        colors = np.full((n, 3), DEFAULT_GRAY)
    labels = props["label"].astype(np.int64) if "label" in props else np.zeros(n, np.int64)
    if "radius" in props:
        radius = props["radius"]
    else:
        diag = float(np.linalg.norm(pos.max(axis=0) - pos.min(axis=0))) if n else 0.0
        radius = DEFAULT_RADIUS_FRACTION * diag if diag > 0 else DEFAULT_RADIUS_FRACTION
    return TargetCloud(pos, colors, labels, radius)


def save_cloud(path, cloud: TargetCloud, binary=True):
    """Write x,y,z (double), red,green,blue (uchar), label (int), radius (double)."""
    n = cloud.n_points
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        f"ply\nformat {fmt} 1.0\nelement vertex {n}\n"
        "property double x\nproperty double y\nproperty double z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "property int label\nproperty double radius\nend_header\n"
    )
    rgb = np.clip(np.rint(cloud.colors * 255.0), 0, 255).astype(np.uint8)
    if binary:
        dtype = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8"), ("red", "u1"),
                          ("green", "u1"), ("blue", "u1"), ("label", "<i4"), ("radius", "<f8")])
        rec = np.empty(n, dtype=dtype)
        for i, a in enumerate("xyz"):
            rec[a] = cloud.positions[:, i]
        rec["red"], rec["green"], rec["blue"] = rgb[:, 0], rgb[:, 1], rgb[:, 2]
        rec["label"] = cloud.labels
        rec["radius"] = cloud.radius
        Path(path).write_bytes(header.encode("ascii") + rec.tobytes())
    else:
        lines = [
            f"{p[0]!r} {p[1]!r} {p[2]!r} {c[0]} {c[1]} {c[2]} {lab} {rad!r}"
            for p, c, lab, rad in zip(cloud.positions.tolist(), rgb.tolist(),
                                      cloud.labels.tolist(), cloud.radius.tolist())
        ]
        Path(path).write_text(header + "".join(line + "\n" for line in lines))


# ---------------------------------------------------------------------------
# Normalization


def normalize_cloud(cloud: TargetCloud):
    """Centre on the centroid and scale to unit bounding-box diagonal.

    Returns ``(normalized, scale, offset)`` with
    ``normalized = (original - offset) * scale``; radii scale alike.
    """
    if cloud.n_points < 2:
        raise DegenerateCloud("need at least 2 points to normalize")
    offset = cloud.positions.mean(axis=0)
    centred = cloud.positions - offset
    diag = float(np.linalg.norm(centred.max(axis=0) - centred.min(axis=0)))
    if diag == 0.0:
        raise DegenerateCloud("bounding box has zero diagonal")
    scale = 1.0 / diag
    out = TargetCloud(centred * scale, cloud.colors, cloud.labels, cloud.radius * scale)
    return out, scale, offset


def denormalize_points(points, scale, offset):
    return np.asarray(points, dtype=np.float64) / scale + np.asarray(offset)


# ---------------------------------------------------------------------------
# Component labels


@dataclass
class ComponentAssignment:
    labels: np.ndarray
    names: list | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)

    @property
    def n_components(self):
        return int(self.labels.max()) + 1 if len(self.labels) else 0


def geodesic_labels(graph: NeighborGraph, seeds, seed_labels):
    """Label every node with the component of its nearest seed.

    Distance is the shortest path along graph edges weighted by Euclidean
    length. Ties go to the seed listed first; unreachable nodes take the
    label of the first seed.
    """
    n = graph.n_points
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise InvalidSeed("at least one seed is required")
    for s in seeds:
        if not 0 <= s < n:
            raise InvalidSeed(f"seed {s} outside [0, {n})")
    lengths = np.sqrt(graph.sqdist)
    dist = np.full(n, np.inf)
    owner = np.full(n, -1, dtype=np.int64)
    heap = []
    for order, s in enumerate(seeds):
        if dist[s] > 0:
            dist[s], owner[s] = 0.0, order
            heapq.heappush(heap, (0.0, order, s))
    done = np.zeros(n, dtype=bool)
    while heap:
        d, order, i = heapq.heappop(heap)
        if done[i]:
            continue
        done[i] = True
        lo, hi = graph.indptr[i], graph.indptr[i + 1]
        for j, w in zip(graph.indices[lo:hi], lengths[lo:hi]):
            nd = d + w
            if nd < dist[j] or (nd == dist[j] and order < owner[j]):
                dist[j], owner[j] = nd, order
                heapq.heappush(heap, (nd, order, j))
    owner[owner < 0] = 0
    return np.asarray(seed_labels, dtype=np.int64)[owner]


def assign_labels(cloud: TargetCloud, assignment=None, seeds=None, seed_labels=None,
                  graph: NeighborGraph | None = None, k=16) -> TargetCloud:
    """Apply explicit labels, or grow them from labelled seeds over the k-NN graph."""
    if assignment is not None:
        labels = assignment.labels if isinstance(assignment, ComponentAssignment) else np.asarray(assignment)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if len(labels) != cloud.n_points:
            raise ValidationError(f"{len(labels)} labels for {cloud.n_points} points")
        if len(labels) and labels.min() < 0:
            raise ValidationError("labels must be >= 0")
    elif seeds is not None:
        if seed_labels is None or len(seed_labels) != len(seeds):
            raise ValidationError("one label per seed required")
        graph = graph if graph is not None else build_graph(cloud.positions, k)
        labels = geodesic_labels(graph, seeds, seed_labels)
    else:
        raise ValidationError("give either explicit labels or seeds")
    return TargetCloud(cloud.positions, cloud.colors, labels, cloud.radius)


def read_labels(path):
    from .formats import read_index_file

    rows = read_index_file(path)
    return ComponentAssignment(np.array([r[0] for r in rows], dtype=np.int64))

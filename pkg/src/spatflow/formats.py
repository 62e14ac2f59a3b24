"""On-disk formats.

Binary containers (trajectories ``MMTJ``, priors ``MMSP``, velocity fields
``MMVF``, 2D tracks ``MMTK``) share one layout::

    MMTJ 1\\n
    {"K": ..., "T": ..., "dtype": "float32", ...}\\n
    <little-endian float payload>

The first line is the magic and format version, the second a single-line JSON
manifest with sorted keys, then the raw payload. ``dtype`` defaults to
``float32``; ``float64`` is accepted for lossless round trips.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .geometry import CameraModel, RigidTransform, orthonormalize

FORMAT_VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8"}


def _dtype_name(precision):
    if precision in (32, "32", "float32"):
        return "float32"
    if precision in (64, "64", "float64"):
        return "float64"
    raise ValidationError(f"unsupported precision {precision!r}")


def write_container(path, magic, manifest, payload, precision=32):
    name = _dtype_name(precision)
    manifest = dict(manifest, dtype=name, version=FORMAT_VERSION)
    data = np.ascontiguousarray(payload, dtype=_DTYPES[name])
    manifest["payload_bytes"] = int(data.nbytes)
    header = f"{magic} {FORMAT_VERSION}\n" + json.dumps(manifest, sort_keys=True) + "\n"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(data.tobytes())


def read_container(path, magic):
    with open(path, "rb") as f:
        first = f.readline()
        second = f.readline()
        raw = f.read()
    try:
        tag, version = first.decode("ascii").split()
    except (UnicodeDecodeError, ValueError):
        raise ParseError(f"not a {magic} file", f"{path}: line 1") from None
    if tag != magic:
        raise ParseError(f"expected magic {magic}, found {tag}", f"{path}: line 1")
    if int(version) != FORMAT_VERSION:
        raise ParseError(f"unsupported {magic} version {version}", f"{path}: line 1")
    try:
        manifest = json.loads(second.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"bad manifest: {exc}", f"{path}: line 2") from None
    dtype = _DTYPES.get(manifest.get("dtype", "float32"))
    if dtype is None:
        raise ParseError(f"unknown dtype {manifest.get('dtype')!r}", f"{path}: line 2")
    if len(raw) != manifest.get("payload_bytes", len(raw)):
        raise ParseError(
            f"payload is {len(raw)} bytes, manifest says {manifest['payload_bytes']}",
            f"{path}: offset {len(first) + len(second)}",
        )
    payload = np.frombuffer(raw, dtype=dtype).astype(np.float64)
    return manifest, payload


# ---------------------------------------------------------------------------
# Trajectories / priors / fields


def save_trajectories(path, trajs, precision=32):
    from .trajectory import TrajectorySet  # noqa: F401  (type only)

    manifest = {
        "K": trajs.n_trajectories,
        "T": trajs.n_frames,
        "component_labels": [int(x) for x in trajs.labels],
        "scale": float(trajs.meta.get("scale", 1.0)),
        "source": trajs.meta.get("source", "full"),
    }
    write_container(path, "MMTJ", manifest, trajs.positions.reshape(-1), precision)


def load_trajectories(path):
    from .trajectory import TrajectorySet

    m, data = read_container(path, "MMTJ")
    k, t = int(m["K"]), int(m["T"])
    if data.size != k * t * 3:
        raise ParseError(f"payload holds {data.size} floats, expected {k * t * 3}", path)
    meta = {"scale": m.get("scale", 1.0), "source": m.get("source", "full")}
    return TrajectorySet(data.reshape(k, t, 3), np.asarray(m["component_labels"]), meta)


def save_prior(path, prior, precision=32):
    c = prior.n_components
    blocks = np.empty((prior.n_frames - 1, c, 12))
    for ci, seq in enumerate(prior.components):
        for t, tr in enumerate(seq):
            blocks[t, ci, :9] = tr.rotation.reshape(-1)
            blocks[t, ci, 9:] = tr.translation
    manifest = {
        "T": prior.n_frames,
        "components": c,
        "anchors": [[float(x) for x in a] for a in prior.anchors],
        "scale": float(prior.scale),
    }
    write_container(path, "MMSP", manifest, blocks.reshape(-1), precision)


def load_prior(path):
    from .prior import SpatPrior

    m, data = read_container(path, "MMSP")
    t, c = int(m["T"]), int(m["components"])
    if data.size != (t - 1) * c * 12:
        raise ParseError("prior payload size mismatch", path)
    blocks = data.reshape(t - 1, c, 12)
    comps = []
    for ci in range(c):
        seq = []
        for step in range(t - 1):
            rot = blocks[step, ci, :9].reshape(3, 3)
            if m["dtype"] == "float32":
                rot = orthonormalize(rot)
            seq.append(RigidTransform(rot, blocks[step, ci, 9:]))
        comps.append(seq)
    return SpatPrior(comps, np.asarray(m["anchors"], dtype=np.float64), scale=m.get("scale", 1.0))


def save_field(path, field, precision=32):
    manifest = {"N": field.n_points, "T": field.n_frames}
    write_container(path, "MMVF", manifest, field.velocities.reshape(-1), precision)


def load_field(path):
    from .velocity import VelocityField

    m, data = read_container(path, "MMVF")
    n, t = int(m["N"]), int(m["T"])
    if data.size != (t - 1) * n * 3:
        raise ParseError("field payload size mismatch", path)
    return VelocityField(data.reshape(t - 1, n, 3))


def save_tracks(path, tracks, precision=32):
    payload = np.concatenate(
        [tracks.uv, tracks.visible[..., None].astype(np.float64)], axis=-1
    )
    manifest = {"K": tracks.n_tracks, "T": tracks.n_frames,
                "width": tracks.width, "height": tracks.height}
    write_container(path, "MMTK", manifest, payload.reshape(-1), precision)


def load_tracks(path):
    from .trajectory import Track2DSet

    m, data = read_container(path, "MMTK")
    k, t = int(m["K"]), int(m["T"])
    arr = data.reshape(k, t, 3)
    return Track2DSet(arr[..., :2], arr[..., 2] > 0.5, int(m["width"]), int(m["height"]))


# ---------------------------------------------------------------------------
# Netpbm images


def _pnm_tokens(data, count, start):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, i = [], start
    while len(tokens) < count:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        if j == i:
            raise ParseError("truncated netpbm header", f"offset {i}")
        tokens.append(data[i:j])
        i = j
    return tokens, i + 1  # single whitespace after the last token


def read_pgm(path):
    """16- or 8-bit binary PGM (P5) as an integer array."""
    data = Path(path).read_bytes()
    (magic, w, h, maxval), off = _pnm_tokens(data, 4, 0)
    if magic != b"P5":
        raise ParseError(f"expected P5, got {magic!r}", f"{path}: offset 0")
    w, h, maxval = int(w), int(h), int(maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    arr = np.frombuffer(data, dtype=dtype, count=w * h, offset=off)
    return arr.reshape(h, w).astype(np.int64)


def write_pgm(path, image, maxval=65535):
    image = np.asarray(image)
    h, w = image.shape
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        f.write(np.clip(image, 0, maxval).astype(dtype).tobytes())


def read_pbm(path):
    """PBM (P1 ascii or P4 packed) as a boolean array; 1 = foreground."""
    data = Path(path).read_bytes()
    (magic, w, h), off = _pnm_tokens(data, 3, 0)
    w, h = int(w), int(h)
    if magic == b"P4":
        row_bytes = (w + 7) // 8
        packed = np.frombuffer(data, dtype=np.uint8, count=row_bytes * h, offset=off)
        bits = np.unpackbits(packed.reshape(h, row_bytes), axis=1)[:, :w]
        return bits.astype(bool)
    if magic == b"P1":
        digits = [c for c in data[off:].decode("ascii") if c in "01"]
        if len(digits) < w * h:
            raise ParseError("truncated P1 body", str(path))
        return np.array(digits[: w * h], dtype=np.int64).reshape(h, w).astype(bool)
    raise ParseError(f"expected P1/P4, got {magic!r}", f"{path}: offset 0")


def write_pbm(path, mask):
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    with open(path, "wb") as f:
        f.write(f"P4\n{w} {h}\n".encode("ascii"))
        f.write(np.packbits(mask, axis=1).tobytes())


def write_ppm(path, image):
    image = np.asarray(image, dtype=np.uint8)
    h, w, _ = image.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(image).tobytes())


def read_ppm(path):
    data = Path(path).read_bytes()
    (magic, w, h, maxval), off = _pnm_tokens(data, 4, 0)
    if magic != b"P6" or int(maxval) != 255:
        raise ParseError("only 8-bit P6 is supported", f"{path}: offset 0")
    w, h = int(w), int(h)
    return np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=off).reshape(h, w, 3).copy()


def list_frames(directory, suffixes):
    d = Path(directory)
    if not d.is_dir():
        raise ValidationError(f"not a directory: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in suffixes)


def load_depth_dir(directory):
    """Depth maps in metres from 16-bit millimetre PGMs, lexicographic order."""
    return [read_pgm(p).astype(np.float64) / 1000.0 for p in list_frames(directory, {".pgm"})]


def load_mask_dir(directory):
    return [read_pbm(p) for p in list_frames(directory, {".pbm"})]


def write_frames(directory, frames, digits=5):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(frames):
        p = d / f"{i:0{digits}d}.ppm"
        write_ppm(p, frame)
        paths.append(p)
    return paths


def read_frames(directory):
    return [read_ppm(p) for p in list_frames(directory, {".ppm"})]


# ---------------------------------------------------------------------------
# Text formats


def read_cameras(path, width, height):
    """One camera per line: ``fx fy cx cy`` then a row-major 3x4 camera-to-world."""
    cams = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            vals = [float(x) for x in line.split()]
        except ValueError:
            raise ParseError("non-numeric camera entry", f"{path}: line {lineno}") from None
        if len(vals) != 16:
            raise ParseError(f"expected 16 numbers, got {len(vals)}", f"{path}: line {lineno}")
        fx, fy, cx, cy = vals[:4]
        m = np.array(vals[4:]).reshape(3, 4)
        cams.append(CameraModel.from_params(fx, fy, cx, cy, width, height,
                                            RigidTransform(m[:, :3], m[:, 3])))
    return cams


def write_cameras(path, cameras):
    lines = []
    for c in cameras:
        m = np.hstack([c.pose.rotation, c.pose.translation[:, None]])
        vals = [c.fx, c.fy, c.cx, c.cy, *m.reshape(-1)]
        lines.append(" ".join(repr(float(v)) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def read_index_file(path):
    """Integers, one per line (blank lines and ``#`` comments ignored)."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            out.append([int(x) for x in line.split()])
        except ValueError:
            raise ParseError("expected integer", f"{path}: line {lineno}") from None
    return out


def write_index_file(path, values):
    Path(path).write_text("".join(f"{int(v)}\n" for v in values))


def write_csv(path, header, rows):
    import csv

    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def remove_quietly(paths):
    for p in paths:
        try:
            if os.path.isdir(p):
                import shutil

                shutil.rmtree(p)
            else:
                os.remove(p)
        except FileNotFoundError:
            pass

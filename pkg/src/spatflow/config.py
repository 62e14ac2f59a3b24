"""Project configuration: an INI file whose every key is also a CLI flag."""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError


def _rgb(text):
    parts = [int(p) for p in str(text).replace(" ", "").split(",")]
    if len(parts) != 3 or any(not 0 <= p <= 255 for p in parts):
        raise ValidationError(f"background must be 'r,g,b' in 0..255, got {text!r}")
    return tuple(parts)


def _bool(text):
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"expected a boolean, got {text!r}")


def _opt_path(text):
    text = str(text).strip()
    return text or None


# (section, key, parser, default)
SCHEMA = [
    ("paths", "trajectories", _opt_path, None),
    ("paths", "tracks", _opt_path, None),
    ("paths", "depth_dir", _opt_path, None),
    ("paths", "mask_dir", _opt_path, None),
    ("paths", "cameras", _opt_path, None),
    ("paths", "prior", _opt_path, None),
    ("paths", "target", _opt_path, None),
    ("paths", "labels", _opt_path, None),
    ("paths", "seeds", _opt_path, None),
    ("paths", "reference_dir", _opt_path, None),
    ("paths", "camera_path", _opt_path, None),
    ("paths", "output_dir", _opt_path, "out"),
    ("extract", "window", int, 3),
    ("extract", "normalize", _bool, True),
    ("refine", "lambda_topo", float, 1.0),
    ("refine", "lambda_kin", float, 1.0),
    ("refine", "sweeps", int, 5),
    ("refine", "damping", float, 0.5),
    ("refine", "epsilon", float, 1e-5),
    ("refine", "neighbors", int, 2048),
    ("refine", "hops", int, 3),
    ("refine", "static_mode", str, "neighborhood"),
    ("control", "speed", float, 1.0),
    ("control", "repeats", int, 1),
    ("control", "mode", str, "loop"),
    ("render", "width", int, 256),
    ("render", "height", int, 256),
    ("render", "background", _rgb, (255, 255, 255)),
    ("render", "render", _bool, True),
    ("run", "seed", int, 0),
    ("run", "precision", int, 32),
]

_BY_KEY = {key: (section, parse, default) for section, key, parse, default in SCHEMA}


@dataclass
class ProjectConfig:
    values: dict = field(default_factory=lambda: {k: d for _, k, _, d in SCHEMA})

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def set(self, key, raw):
        if key not in _BY_KEY:
            raise ValidationError(f"unknown config key {key!r}")
        _, parse, _ = _BY_KEY[key]
        try:
            self.values[key] = parse(raw) if raw is not None else None
        except ValidationError:
            raise
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"bad value for {key}: {raw!r} ({exc})") from None

    def update(self, overrides):
        for key, raw in overrides.items():
            if raw is not None:
                self.set(key, raw)
        return self

    @classmethod
    def from_file(cls, path):
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as f:
                parser.read_file(f)
        except configparser.Error as exc:
            raise ValidationError(f"cannot parse config {path}: {exc}") from None
        cfg = cls()
        for section in parser.sections():
            for key, raw in parser.items(section):
                if key not in _BY_KEY:
                    raise ValidationError(f"unknown config key [{section}] {key}")
                if _BY_KEY[key][0] != section:
                    raise ValidationError(f"key {key} belongs in [{_BY_KEY[key][0]}], not [{section}]")
                cfg.set(key, raw)
        return cfg

    def dumps(self):
        parser = configparser.ConfigParser(interpolation=None)
        for section, key, _, _ in SCHEMA:
            if not parser.has_section(section):
                parser.add_section(section)
            value = self.values[key]
            if value is None:
                text = ""
            elif isinstance(value, tuple):
                text = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            parser.set(section, key, text)
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def validate(self, needs=()):
        """Check numeric preconditions and that every referenced path exists."""
        v = self.values
        if v["window"] < 1 or v["window"] % 2 == 0:
            raise ValidationError("window must be odd and >= 1")
        if v["sweeps"] < 0:
            raise ValidationError("sweeps must be >= 0")
        if not 0 < v["damping"] <= 1:
            raise ValidationError("damping must lie in (0, 1]")
        if v["lambda_topo"] < 0 or v["lambda_kin"] < 0:
            raise ValidationError("loss weights must be >= 0")
        if not v["epsilon"] > 0:
            raise ValidationError("epsilon must be > 0")
        if v["neighbors"] < 1:
            raise ValidationError("neighbors must be >= 1")
        if v["hops"] < 1:
            raise ValidationError("hops must be >= 1")
        if v["static_mode"] not in ("off", "global", "neighborhood"):
            raise ValidationError("static_mode must be off, global or neighborhood")
        if v["repeats"] < 1:
            raise ValidationError("repeats must be >= 1")
        if v["mode"] not in ("loop", "pingpong"):
            raise ValidationError("mode must be loop or pingpong")
        if v["width"] < 11 or v["height"] < 11:
            raise ValidationError("render resolution must be at least 11x11")
        if v["precision"] not in (32, 64):
            raise ValidationError("precision must be 32 or 64")
        for key in needs:
            if not v.get(key):
                raise ValidationError(f"missing required setting {key!r}")
        for _, key, parse, _ in SCHEMA:
            if parse is _opt_path and key != "output_dir" and v[key] is not None:
                if not Path(v[key]).exists():
                    raise ValidationError(f"{key}: path does not exist: {v[key]}")
        return self

    def __eq__(self, other):
        return isinstance(other, ProjectConfig) and self.values == other.values


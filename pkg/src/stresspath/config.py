"""Pipeline configuration: a flat ``key = value`` document (TOML syntax)."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields

import tomli

GEOMETRIES = ("box", "l_shape", "curved_bracket", "cylinder_shell")


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    # domain
    mesh: str = ""
    stress_csv: str = ""
    geometry: str = "curved_bracket"
    base: list = field(default_factory=lambda: ["group:5"])
    fixed: list = field(default_factory=lambda: ["xmin"])
    load_faces: list = field(default_factory=lambda: ["xmax"])
    load: list = field(default_factory=lambda: [100.0, 0.0, 0.0])
    # material, MPa
    young_modulus: float = 1000.0
    poisson_ratio: float = 0.3
    # critical region
    theta_a: float = 3.0
    theta_s: float = 0.1
    # slicing and trajectories, mm
    layer_height: float = 0.1
    line_spacing: float = 0.4
    contour_count: int = 2
    smoothing: float = 0.95
    resample_step: float = 0.5
    max_deviation: float = 0.1
    travel_lift: float = 0.0
    eps: float = 0.0
    rectify_axis: str = "global"
    heat_time: float = 0.0
    slice_snap: float = 0.0
    # solvers
    fea_solver: str = "direct"
    solver_tol: float = 1e-10
    # metrics and output
    compare_slicings: bool = True
    output: str = "out"
    write_svg: bool = True
    jobs: int = 1

    def lift(self) -> float:
        return self.travel_lift if self.travel_lift > 0 else self.layer_height

    def field_eps(self) -> float | None:
        return self.eps if self.eps > 0 else None

    def digest(self, keys) -> str:
        """Stable hash of a subset of settings, used to key stage caches."""
        d = asdict(self)
        sub = {k: d[k] for k in sorted(keys)}
        if sub.get("stress_csv") and os.path.exists(sub["stress_csv"]):
            st = os.stat(sub["stress_csv"])
            sub["stress_csv_stat"] = [st.st_size, st.st_mtime_ns]
        if "mesh" in sub and sub["mesh"]:
            for ext in (".node", ".ele", ".face"):
                p = _stem(sub["mesh"]) + ext
                if os.path.exists(p):
                    st = os.stat(p)
                    sub[p] = [st.st_size, st.st_mtime_ns]
        return hashlib.sha256(json.dumps(sub, sort_keys=True).encode()).hexdigest()[:16]


def _stem(path: str) -> str:
    root, ext = os.path.splitext(path)
    return root if ext in (".node", ".ele", ".face") else path


FEA_KEYS = ("mesh", "stress_csv", "geometry", "fixed", "load_faces", "load", "poisson_ratio", "fea_solver", "solver_tol")
SLICE_KEYS = FEA_KEYS + ("base", "layer_height", "heat_time", "slice_snap")

_CHOICES = {
    "geometry": GEOMETRIES,
    "rectify_axis": ("global", "pca"),
    "fea_solver": ("direct", "cg"),
}

# (lower, upper, lower inclusive, upper inclusive)
_RANGES = {
    "young_modulus": (0.0, None, False, False),
    "poisson_ratio": (-1.0, 0.5, False, False),
    "theta_a": (1.0, None, False, False),
    "theta_s": (0.0, 1.0, False, False),
    "layer_height": (0.0, None, False, False),
    "line_spacing": (0.0, None, False, False),
    "contour_count": (0, None, True, False),
    "smoothing": (0.0, 1.0, True, True),
    "resample_step": (0.0, None, False, False),
    "max_deviation": (0.0, None, False, False),
    "travel_lift": (0.0, None, True, False),
    "eps": (0.0, None, True, False),
    "heat_time": (0.0, None, True, False),
    "slice_snap": (0.0, 0.5, True, False),
    "solver_tol": (0.0, 1.0, False, False),
    "jobs": (1, None, True, False),
}


def _check_selector(key, s):
    if not isinstance(s, str):
        raise ConfigError(f"{key}: selectors must be strings, got {s!r}")
    if s in ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax", "all"):
        return
    if s.startswith("group:"):
        try:
            int(s[6:])
            return
        except ValueError:
            pass
    raise ConfigError(f"{key}: unknown face selector {s!r} (use xmin..zmax, all or group:<id>)")


def _coerce(name: str, typ, value):
    if typ is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true/false, got {value!r}")
        return value
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if typ is str:
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string, got {value!r}")
        return value
    if typ is list:
        if isinstance(value, str) and name != "load":
            value = [value]
        if not isinstance(value, list):
            raise ConfigError(f"{name}: expected a list, got {value!r}")
        return list(value)
    raise ConfigError(f"{name}: unsupported type")


_TYPES = {"float": float, "int": int, "str": str, "bool": bool, "list": list}


def validate(cfg: Config) -> Config:
    for key, (lo, hi, lo_inc, hi_inc) in _RANGES.items():
        v = getattr(cfg, key)
        if lo is not None and (v < lo or (v == lo and not lo_inc)):
            raise ConfigError(f"{key} = {v} out of range (must be {'>=' if lo_inc else '>'} {lo})")
        if hi is not None and (v > hi or (v == hi and not hi_inc)):
            raise ConfigError(f"{key} = {v} out of range (must be {'<=' if hi_inc else '<'} {hi})")
    for key, opts in _CHOICES.items():
        if getattr(cfg, key) not in opts:
            raise ConfigError(f"{key} = {getattr(cfg, key)!r}; expected one of {', '.join(opts)}")
    for key in ("base", "fixed", "load_faces"):
        sel = getattr(cfg, key)
        if not sel:
            raise ConfigError(f"{key}: at least one face selector is required")
        for s in sel:
            _check_selector(key, s)
    if len(cfg.load) != 3 or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in cfg.load):
        raise ConfigError(f"load: expected three numbers (N), got {cfg.load!r}")
    cfg.load = [float(x) for x in cfg.load]
    if cfg.mesh and not os.path.exists(_stem(cfg.mesh) + ".node"):
        raise ConfigError(f"mesh: {_stem(cfg.mesh)}.node not found")
    if cfg.stress_csv and not os.path.exists(cfg.stress_csv):
        raise ConfigError(f"stress_csv: {cfg.stress_csv} not found")
    return cfg


def from_dict(data: dict, base_dir: str | None = None) -> Config:
    """Build a validated config; unknown keys are rejected."""
    known = {f.name: _TYPES[f.type] for f in fields(Config)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown configuration key {key!r}")
        if isinstance(value, dict):
            raise ConfigError(f"{key}: tables are not supported")
        kwargs[key] = _coerce(key, known[key], value)
    cfg = Config(**kwargs)
    if base_dir:
        for key in ("mesh", "stress_csv"):
            val = getattr(cfg, key)
            if val and not os.path.isabs(val):
                setattr(cfg, key, os.path.normpath(os.path.join(base_dir, val)))
    return validate(cfg)


def parse_config(path) -> Config:
    """Read a configuration file; unspecified keys take their defaults.

    Relative mesh paths are resolved against the file's directory.
    """
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    return from_dict(data, os.path.dirname(os.path.abspath(path)))


def dump_config(cfg: Config) -> str:
    """Serialize as a flat TOML document that :func:`parse_config` reads back."""
    out = []
    for f in fields(Config):
        v = getattr(cfg, f.name)
        out.append(f"{f.name} = {json.dumps(v) if not isinstance(v, bool) else str(v).lower()}")
    return "\n".join(out) + "\n"

"""End-to-end orchestration: FEA, slicing, flow preprocessing, trajectories, metrics."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .config import FEA_KEYS, SLICE_KEYS, Config, ConfigError
from .fea import (BoundaryConditions, Material, PrincipalStressField, StressTensorField, face_load,
                  principal_decomposition, read_stress_csv, solve_elasticity, write_stress_csv)
from .meshcore import TetLocator, TetMesh, load_tet_mesh
from .metrics import (AlignmentReport, MetricError, SpacingReport, alignment_samples, compare_slicings,
                      node_critical, spacing_distribution, write_histogram_csv, write_report_json)
from .slicing import DistanceField, extract_slices, geodesic_heat, with_critical, write_slice
from .stressflow import preprocess_slice, write_flow_csv
from .toolpath import LayerToolpath, ToolpathProgram, write_toolpath
from .trajopt import generate_layer

logger = logging.getLogger(__name__)

STAGE_ORDER = ("fea", "slice", "flow", "paths", "metrics")


class StageError(RuntimeError):
    """A compute failure, tagged with the stage it happened in."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


# ---------------------------------------------------------------------------
# Domain setup
# ---------------------------------------------------------------------------

def build_mesh(cfg: Config) -> TetMesh:
    if cfg.mesh:
        root, ext = os.path.splitext(cfg.mesh)
        stem = root if ext in (".node", ".ele", ".face") else cfg.mesh
        face = stem + ".face"
        return load_tet_mesh(stem + ".node", stem + ".ele", face if os.path.exists(face) else None)
    return getattr(geometry, cfg.geometry)()


def select_faces(mesh: TetMesh, selectors) -> np.ndarray:
    """Boundary face indices matching any selector.

    ``xmin`` .. ``zmax`` pick faces lying on the bounding-box side (within
    1e-6 of the extent), ``group:<id>`` picks faces carrying that marker.
    """
    v = mesh.vertices
    fv = v[mesh.boundary_faces]
    lo, hi = v.min(axis=0), v.max(axis=0)
    tol = 1e-6 * max(float((hi - lo).max()), 1.0)
    hit = np.zeros(len(fv), bool)
    for s in selectors:
        if s == "all":
            hit[:] = True
        elif s.startswith("group:"):
            if mesh.face_markers is None:
                raise ConfigError(f"selector {s!r}: mesh has no face markers")
            hit |= mesh.face_markers == int(s[6:])
        else:
            ax = "xyz".index(s[0])
            ref = lo[ax] if s.endswith("min") else hi[ax]
            hit |= np.all(np.abs(fv[:, :, ax] - ref) <= tol, axis=1)
    idx = np.flatnonzero(hit)
    if idx.size == 0:
        raise ConfigError(f"face selector {list(selectors)} matches no boundary face")
    return idx


def boundary_conditions(mesh: TetMesh, cfg: Config) -> BoundaryConditions:
    fixed_faces = select_faces(mesh, cfg.fixed)
    load_faces = select_faces(mesh, cfg.load_faces)
    nodes = np.unique(mesh.boundary_faces[fixed_faces])
    loads = face_load(mesh, mesh.boundary_faces[load_faces], np.asarray(cfg.load))
    return BoundaryConditions(fixed=[(int(n), "xyz") for n in nodes], loads=loads)


# ---------------------------------------------------------------------------
# Caching
# ---------------------------------------------------------------------------

def _cache_path(out: str, stage: str, key: str) -> str:
    return os.path.join(out, "cache", f"{stage}-{key}.npz")


def _load_cache(path: str):
    if not os.path.exists(path):
        return None
    try:
        with np.load(path) as z:
            return {k: z[k] for k in z.files}
    except (OSError, ValueError):
        logger.warning("ignoring unreadable cache %s", path)
        return None


def _save_cache(path: str, **arrays) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    tmp = path + ".tmp.npz"
    np.savez(tmp, **arrays)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

@dataclass
class PipelineResult:
    mesh: TetMesh
    stress: StressTensorField
    principal: PrincipalStressField
    distance: DistanceField | None = None
    slices: list = field(default_factory=list)
    flows: list = field(default_factory=list)
    program: ToolpathProgram | None = None
    alignment: AlignmentReport | None = None
    spacing: SpacingReport | None = None
    timings: dict = field(default_factory=dict)
    cache_hits: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)


def stage_fea(mesh: TetMesh, cfg: Config, out: str, res: PipelineResult) -> StressTensorField:
    path = _cache_path(out, "fea", cfg.digest(FEA_KEYS))
    cached = _load_cache(path)
    if cached is not None and cached["stress"].shape == (mesh.n_vertices, 6):
        res.cache_hits["fea"] = True
        return StressTensorField(cached["stress"])
    res.cache_hits["fea"] = False
    if cfg.stress_csv:
        return read_stress_csv(cfg.stress_csv, mesh.n_vertices)
    bc = boundary_conditions(mesh, cfg)
    mat = Material(cfg.young_modulus, cfg.poisson_ratio)
    _, stress = solve_elasticity(mesh, mat, bc, method=cfg.fea_solver, tol=cfg.solver_tol)
    _save_cache(path, stress=stress.components)
    return stress


def stage_slice(mesh: TetMesh, stress: StressTensorField, cfg: Config, out: str, res: PipelineResult):
    path = _cache_path(out, "slice", cfg.digest(SLICE_KEYS))
    cached = _load_cache(path)
    if cached is not None and cached["phi"].shape == (mesh.n_vertices,):
        res.cache_hits["slice"] = True
        dist = DistanceField(cached["phi"], cached["source"], float(cached["time"]))
    else:
        res.cache_hits["slice"] = False
        base = select_faces(mesh, cfg.base)
        source = np.unique(mesh.boundary_faces[base])
        dist = geodesic_heat(mesh, source, time=cfg.heat_time or None, tol=cfg.solver_tol)
        _save_cache(path, phi=dist.values, source=dist.source, time=np.float64(dist.time))
    slices = extract_slices(mesh, dist, stress, cfg.layer_height, snap=cfg.slice_snap)
    if not slices:
        raise StageError("slice", "no layer could be extracted")
    return dist, slices


def _slice_work(args):
    slc, cfg, gmax, do_paths = args
    flow = preprocess_slice(slc, cfg.theta_a, cfg.theta_s, global_max=gmax, axis=cfg.rectify_axis,
                            tol=cfg.solver_tol)
    if not do_paths:
        return flow, None
    _, layer = generate_layer(slc, flow.preprocessed, spacing=cfg.line_spacing, contour_count=cfg.contour_count,
                              p=cfg.smoothing, step=cfg.resample_step, max_deviation=cfg.max_deviation,
                              lift=cfg.lift(), eps=cfg.field_eps(), tol=cfg.solver_tol)
    return flow, layer


def map_slices(fn, items, jobs: int):
    """Ordered map over slices, threaded when ``jobs > 1``."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def run_stages(cfg: Config, until: str = "metrics", out: str | None = None, jobs: int | None = None,
               write: bool = True) -> PipelineResult:
    """Run the pipeline through ``until`` and write its artifacts to ``out``."""
    if until not in STAGE_ORDER:
        raise ValueError(f"unknown stage {until!r}")
    out = out or cfg.output
    jobs = jobs or cfg.jobs
    upto = STAGE_ORDER.index(until)
    os.makedirs(out, exist_ok=True)

    t0 = time.perf_counter()
    mesh = build_mesh(cfg)
    res = PipelineResult(mesh, None, None)
    try:
        stress = stage_fea(mesh, cfg, out, res)
    except ConfigError:
        raise
    except Exception as exc:
        raise StageError("fea", str(exc)) from exc
    res.stress = stress
    res.principal = principal_decomposition(stress)
    res.timings["fea"] = time.perf_counter() - t0
    if write:
        p = os.path.join(out, "stress.csv")
        write_stress_csv(stress, p)
        res.files["stress"] = p
    if upto < 1:
        return res

    t0 = time.perf_counter()
    try:
        res.distance, res.slices = stage_slice(mesh, stress, cfg, out, res)
    except (ConfigError, StageError):
        raise
    except Exception as exc:
        raise StageError("slice", str(exc)) from exc
    res.timings["slice"] = time.perf_counter() - t0
    if write:
        d = os.path.join(out, "slices")
        for slc in res.slices:
            write_slice(slc, d)
        res.files["slices"] = d
    if upto < 2:
        return res

    t0 = time.perf_counter()
    gmax = float(np.abs(res.principal.sigma1).max())
    if not gmax > 0:
        raise StageError("flow", "stress field vanishes everywhere; check loads")
    do_paths = upto >= 3
    try:
        work = map_slices(_slice_work, [(s, cfg, gmax, do_paths) for s in res.slices], jobs)
    except Exception as exc:
        raise StageError("paths" if do_paths else "flow", str(exc)) from exc
    res.flows = [w[0] for w in work]
    res.slices = [with_critical(s, f.critical.mask) for s, f in zip(res.slices, res.flows)]
    res.timings["flow+paths" if do_paths else "flow"] = time.perf_counter() - t0
    if write:
        d = os.path.join(out, "flow")
        os.makedirs(d, exist_ok=True)
        for s, f in zip(res.slices, res.flows):
            write_flow_csv(f, os.path.join(d, f"flow_{s.index:04d}.csv"))
        res.files["flow"] = d
    if not do_paths:
        return res

    layers = [w[1] for w in work]
    res.program = ToolpathProgram(layers)
    if write:
        p = os.path.join(out, "toolpath.txt")
        write_toolpath(res.program, p)
        res.files["toolpath"] = p
        d = os.path.join(out, "layers")
        os.makedirs(d, exist_ok=True)
        for layer in layers:
            write_layer_csv(layer, os.path.join(d, f"layer_{layer.index:04d}.csv"))
            if cfg.write_svg:
                write_layer_svg(layer, os.path.join(d, f"layer_{layer.index:04d}.svg"))
        res.files["layers"] = d
    if upto < 4:
        return res

    t0 = time.perf_counter()
    try:
        res.alignment, res.spacing = stage_metrics(res, cfg)
    except Exception as exc:
        raise StageError("metrics", str(exc)) from exc
    res.timings["metrics"] = time.perf_counter() - t0
    if write:
        p = os.path.join(out, "report.json")
        extra = {"layers": len(layers), "timings": res.timings,
                 "print_length": sum(ly.print_length() for ly in layers),
                 "travel_length": sum(ly.travel_length() for ly in layers)}
        write_report_json(p, res.alignment, res.spacing, extra)
        res.files["report"] = p
        if res.spacing is not None:
            h = os.path.join(out, "spacing_histogram.csv")
            write_histogram_csv(h, res.spacing)
            res.files["histogram"] = h
    return res


def stage_metrics(res: PipelineResult, cfg: Config):
    mask = node_critical(res.principal, cfg.theta_a, cfg.theta_s)
    report = AlignmentReport()
    if cfg.compare_slicings:
        report = compare_slicings(res.mesh, res.stress, cfg.layer_height, distance=res.distance,
                                  theta_a=cfg.theta_a, theta_s=cfg.theta_s)
    try:
        samples = alignment_samples(res.program, res.mesh, res.stress, mask, locator=TetLocator(res.mesh))
        report.beta["toolpath"] = samples.mean()
        report.critical_points["toolpath"] = samples.count
    except MetricError as exc:
        logger.warning("trajectory alignment unavailable: %s", exc)
    report.critical_nodes.setdefault("volume", int(mask.sum()))
    try:
        spacing = spacing_distribution(res.program.layers, cfg.line_spacing)
    except MetricError as exc:
        logger.warning("spacing statistics unavailable: %s", exc)
        spacing = None
    return report, spacing


def run_pipeline(cfg: Config, out: str | None = None, jobs: int | None = None):
    """Full pipeline; returns ``(program, alignment report, spacing report)``."""
    res = run_stages(cfg, "metrics", out, jobs)
    return res.program, res.alignment, res.spacing


# ---------------------------------------------------------------------------
# Per-layer exports
# ---------------------------------------------------------------------------

def write_layer_csv(layer: LayerToolpath, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("item,kind,iso_index,x,y,z,nx,ny,nz\n")
        for i, item in enumerate(layer.items):
            pts, nrm = item.path_points()
            for p, n in zip(pts, nrm):
                fh.write(f"{i},{item.kind},{item.iso_index}," + ",".join(f"{x:.6f}" for x in (*p, *n)) + "\n")


_COLORS = {"infill": "#1f5fbf", "contour": "#202020", "travel": "#d04040"}


def write_layer_svg(layer: LayerToolpath, path, size: float = 800.0) -> None:
    """Top view (xy projection) of one layer; travel moves dashed."""
    pts = [it.points for it in layer.items if len(it)]
    if not pts:
        with open(path, "w") as fh:
            fh.write('<svg xmlns="http://www.w3.org/2000/svg" width="10" height="10"/>\n')
        return
    allp = np.vstack(pts)[:, :2]
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    ext = float(max((hi - lo).max(), 1e-9))
    s = (size - 20) / ext
    w, h = (hi - lo) * s + 20

    def xy(p):
        return f"{(p[0] - lo[0]) * s + 10:.2f},{(hi[1] - p[1]) * s + 10:.2f}"

    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}">']
    for it in layer.items:
        p, _ = it.path_points()
        dash = ' stroke-dasharray="3,3"' if it.kind == "travel" else ""
        lines.append(f'<polyline fill="none" stroke="{_COLORS[it.kind]}" stroke-width="1"{dash} '
                     f'points="{" ".join(xy(q) for q in p)}"/>')
    lines.append("</svg>")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")

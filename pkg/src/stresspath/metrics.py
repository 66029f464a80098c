"""Alignment and spacing metrics for slicings and toolpaths."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .fea import PrincipalStressField, StressTensorField, principal_decomposition
from .meshcore import TetLocator, TetMesh
from .slicing import (DistanceField, SlicingError, extract_slices, geodesic_heat, planar_distance,
                      slicing_alignment)
from .stressflow import CriticalMask, critical_from_values
from .toolpath import LayerToolpath, ToolpathProgram
from .trajopt import polyline_distance

HIST_BIN = 0.02
END_TOL = 1e-6
VARIANTS = ("offset", "planar_x", "planar_y", "planar_z")


class MetricError(ValueError):
    pass


def _components(stress) -> np.ndarray:
    if isinstance(stress, PrincipalStressField):
        return stress.tensors().components
    if isinstance(stress, StressTensorField):
        return stress.components
    return np.asarray(stress, float)


def _node_mask(mask) -> np.ndarray:
    return np.asarray(mask.mask if isinstance(mask, CriticalMask) else mask, bool)


def node_critical(stress, theta_a: float = 3.0, theta_s: float = 0.1) -> np.ndarray:
    """Critical mask over the volume nodes."""
    ps = stress if isinstance(stress, PrincipalStressField) else principal_decomposition(_components(stress))
    return critical_from_values(ps.values, theta_a, theta_s)


def polyline_tangents(points: np.ndarray, closed: bool = False) -> np.ndarray:
    """Unit tangents by central differences (one-sided at open ends)."""
    p = np.asarray(points, float)
    if len(p) < 2:
        return np.zeros_like(p)
    if closed:
        t = np.roll(p, -1, axis=0) - np.roll(p, 1, axis=0)
    else:
        t = np.empty_like(p)
        t[1:-1] = p[2:] - p[:-2]
        t[0] = p[1] - p[0]
        t[-1] = p[-1] - p[-2]
    n = np.linalg.norm(t, axis=1)
    n[n == 0] = 1.0
    return t / n[:, None]


@dataclass(frozen=True, eq=False)
class AlignmentSamples:
    """Per-point trajectory alignment |d1 . tangent| and where each sample lies."""

    values: np.ndarray
    layers: np.ndarray
    critical: np.ndarray

    @property
    def count(self) -> int:
        return int(self.critical.sum())

    def mean(self) -> float:
        if not self.critical.any():
            raise MetricError("no critical points on the print trajectories")
        return float(self.values[self.critical].mean())

    def per_layer(self) -> dict[int, float]:
        out = {}
        for k in np.unique(self.layers[self.critical]):
            sel = self.critical & (self.layers == k)
            out[int(k)] = float(self.values[sel].mean())
        return out


def alignment_samples(program: ToolpathProgram | list[LayerToolpath], mesh: TetMesh, stress, mask,
                      include_contours: bool = False, locator: TetLocator | None = None) -> AlignmentSamples:
    """Sample |d1 . d| at every infill point (contours optional, travel never).

    The stress tensor is interpolated barycentrically inside the containing
    tet before decomposition; a point counts as critical when the interpolated
    node mask is at least one half.
    """
    layers = program.layers if isinstance(program, ToolpathProgram) else list(program)
    kinds = ("infill", "contour") if include_contours else ("infill",)
    pts, tans, lids = [], [], []
    for layer in layers:
        for item in layer.items:
            if item.kind not in kinds or len(item) < 2:
                continue
            pts.append(item.points)
            tans.append(polyline_tangents(item.points, item.closed))
            lids.append(np.full(len(item), layer.index))
    if not pts:
        raise MetricError("no print points to evaluate")
    P = np.vstack(pts)
    T = np.vstack(tans)
    L = np.concatenate(lids)
    loc = locator or TetLocator(mesh)
    tet, w = loc.locate(P)
    nodes = mesh.tets[tet]
    comps = _components(stress)
    interp = np.einsum("pk,pkc->pc", w, comps[nodes])
    d1 = principal_decomposition(interp).max_direction
    beta = np.clip(np.abs(np.einsum("ij,ij->i", d1, T)), 0.0, 1.0)
    crit = np.einsum("pk,pk->p", w, _node_mask(mask)[nodes].astype(float)) >= 0.5
    return AlignmentSamples(beta, L, crit)


def trajectory_alignment(program, mesh: TetMesh, stress, mask, include_contours: bool = False,
                         locator: TetLocator | None = None) -> float:
    """Mean trajectory alignment over critical print points."""
    return alignment_samples(program, mesh, stress, mask, include_contours, locator).mean()


# ---------------------------------------------------------------------------
# Spacing
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpacingReport:
    histogram: np.ndarray
    bin_edges: np.ndarray
    mean: float
    variance: float
    nominal: float
    samples: np.ndarray = field(repr=False)

    @property
    def count(self) -> int:
        return len(self.samples)

    def to_dict(self) -> dict:
        return {"nominal": self.nominal, "mean": self.mean, "variance": self.variance,
                "samples": int(self.count), "bin_width": HIST_BIN,
                "histogram": [float(h) for h in self.histogram]}


def histogram(samples: np.ndarray, width: float = HIST_BIN) -> tuple[np.ndarray, np.ndarray]:
    """Normalized histogram on a fixed grid of ``width`` starting at zero."""
    top = max(float(samples.max()), width)
    nb = int(np.ceil(top / width - 1e-12)) + 1
    edges = np.arange(nb + 1) * width
    counts, _ = np.histogram(samples, bins=edges)
    return counts / counts.sum(), edges


def _neighbour_distances(points, neighbours) -> np.ndarray:
    """Distance to the nearest neighbouring polyline piece, ignoring open-end feet."""
    best = np.full(len(points), np.inf)
    valid = np.zeros(len(points), bool)
    for nb in neighbours:
        q = nb.path_points()[0]
        d, seg, par = polyline_distance(points, q, closed=False, return_foot=True)
        at_end = np.zeros(len(points), bool)
        if not nb.closed and len(q) > 1:
            # a foot clamped to an end point only counts if the point lies beyond that end
            lo, hi = q[1] - q[0], q[-1] - q[-2]
            past_lo = (points - q[0]) @ lo < -END_TOL * (lo @ lo)
            past_hi = (points - q[-1]) @ hi > END_TOL * (hi @ hi)
            at_end = ((seg == 0) & (par <= 0.0) & past_lo) | ((seg == len(q) - 2) & (par >= 1.0) & past_hi)
        closer = d < best
        best = np.where(closer, d, best)
        valid = np.where(closer, ~at_end, valid)
    return np.where(valid, best, np.nan)


def spacing_samples(layer: LayerToolpath | list, nominal: float = 0.4) -> np.ndarray:
    """Normalized distances from each infill point to the adjacent-index polylines."""
    lines = layer.infill if isinstance(layer, LayerToolpath) else [ln for ln in layer if ln.kind == "infill"]
    if len(lines) < 2:
        raise MetricError("spacing needs at least two infill polylines")
    by_index: dict[int, list] = {}
    for ln in lines:
        by_index.setdefault(ln.iso_index, []).append(ln)
    out = []
    for ln in lines:
        for nb_idx in (ln.iso_index - 1, ln.iso_index + 1):
            nbs = by_index.get(nb_idx)
            if not nbs:
                continue
            d = _neighbour_distances(ln.points, nbs)
            out.append(d[np.isfinite(d)])
    s = np.concatenate(out) if out else np.empty(0)
    if s.size == 0:
        raise MetricError("no pair of adjacent isolines to measure")
    return s / nominal


def spacing_distribution(layer, nominal: float = 0.4) -> SpacingReport:
    """Mean, population variance and histogram of normalized neighbour distances.

    ``layer`` may be one layer or a list of layers (samples are pooled).
    """
    if not nominal > 0:
        raise ValueError("nominal spacing must be > 0")
    if isinstance(layer, (list, tuple)) and layer and isinstance(layer[0], LayerToolpath):
        parts = []
        for ly in layer:
            try:
                parts.append(spacing_samples(ly, nominal))
            except MetricError:
                continue
        if not parts:
            raise MetricError("no layer has two adjacent infill polylines")
        s = np.concatenate(parts)
    else:
        s = spacing_samples(layer, nominal)
    h, e = histogram(s)
    return SpacingReport(h, e, float(s.mean()), float(s.var()), float(nominal), s)


# ---------------------------------------------------------------------------
# Slicing comparison
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class AlignmentReport:
    gamma: dict = field(default_factory=dict)
    beta: dict = field(default_factory=dict)
    per_slice: dict = field(default_factory=dict)
    critical_nodes: dict = field(default_factory=dict)
    critical_points: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and np.isnan(v) else v

        return {
            "gamma": dict(self.gamma),
            "beta": dict(self.beta),
            "per_slice": {k: [clean(x) for x in v] for k, v in self.per_slice.items()},
            "critical_nodes": dict(self.critical_nodes),
            "critical_points": dict(self.critical_points),
        }


def slicing_variant_field(mesh: TetMesh, variant: str, source=None, distance=None) -> np.ndarray:
    if variant == "offset":
        if distance is not None:
            return distance.values if isinstance(distance, DistanceField) else np.asarray(distance, float)
        if source is None:
            raise ValueError("offset slicing needs a base-face source or a distance field")
        return geodesic_heat(mesh, source).values
    if variant.startswith("planar_") and variant[-1] in "xyz":
        return planar_distance(mesh, "xyz".index(variant[-1]))
    raise ValueError(f"unknown slicing variant {variant!r}")


def compare_slicings(mesh: TetMesh, stress, layer_height: float, source=None, distance=None,
                     variants=VARIANTS, theta_a: float = 3.0, theta_s: float = 0.1) -> AlignmentReport:
    """Slicing alignment on critical slice vertices for each slicing variant.

    Slice-vertex criticality uses the interpolated stress with the part-wide
    maximum |s1| as the significance reference.
    """
    comps = _components(stress)
    ps = principal_decomposition(comps)
    gmax = float(np.abs(ps.sigma1).max())
    report = AlignmentReport()
    for v in variants:
        phi = slicing_variant_field(mesh, v, source, distance)
        slices = extract_slices(mesh, phi, StressTensorField(comps), layer_height)
        masks = [critical_from_values(s.stress.values, theta_a, theta_s, gmax) for s in slices]
        if not any(m.any() for m in masks):
            raise SlicingError(f"{v}: no critical nodes on any slice; lower theta_a or theta_s")
        g, per = slicing_alignment(slices, masks)
        report.gamma[v] = g
        report.per_slice[v] = per
        report.critical_nodes[v] = int(sum(int(m.sum()) for m in masks))
    return report


def write_report_json(path, alignment: AlignmentReport | None = None, spacing: SpacingReport | None = None,
                      extra: dict | None = None) -> None:
    doc = {}
    if alignment is not None:
        doc["alignment"] = alignment.to_dict()
    if spacing is not None:
        doc["spacing"] = spacing.to_dict()
    if extra:
        doc.update(extra)
    with open(path, "w", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_histogram_csv(path, spacing: SpacingReport) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["bin_lo", "bin_hi", "mass"])
        for lo, hi, m in zip(spacing.bin_edges[:-1], spacing.bin_edges[1:], spacing.histogram):
            wr.writerow([f"{lo:.4f}", f"{hi:.4f}", f"{m:.9g}"])

"""Toolpath containers and the machine-neutral text format.

File format, one record per line (LF, 6 decimals)::

    # stresspath toolpath v1
    LAYER 0
    PRINT x y z nx ny nz
    TRAVEL x y z nx ny nz
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

KINDS = ("infill", "contour", "travel")
HEADER = "# stresspath toolpath v1"


@dataclass(eq=False)
class Polyline:
    points: np.ndarray
    normals: np.ndarray
    closed: bool = False
    kind: str = "infill"
    iso_index: int = -1

    def __post_init__(self):
        self.points = np.asarray(self.points, float).reshape(-1, 3)
        self.normals = np.asarray(self.normals, float).reshape(-1, 3)
        if self.points.shape != self.normals.shape:
            raise ValueError("points and normals must have the same shape")
        if self.kind not in KINDS:
            raise ValueError(f"unknown polyline kind {self.kind!r}")

    def __len__(self):
        return len(self.points)

    @property
    def is_print(self) -> bool:
        return self.kind != "travel"

    def length(self) -> float:
        p = self.points
        if len(p) < 2:
            return 0.0
        seg = np.linalg.norm(np.diff(p, axis=0), axis=1).sum()
        if self.closed:
            seg += np.linalg.norm(p[0] - p[-1])
        return float(seg)

    def path_points(self) -> tuple[np.ndarray, np.ndarray]:
        """Points in deposition order; closed loops repeat their first point."""
        if self.closed and len(self.points) > 1:
            return np.vstack([self.points, self.points[:1]]), np.vstack([self.normals, self.normals[:1]])
        return self.points, self.normals

    def reversed(self) -> "Polyline":
        return Polyline(self.points[::-1].copy(), self.normals[::-1].copy(), self.closed, self.kind, self.iso_index)

    @property
    def start(self) -> np.ndarray:
        return self.points[0]

    @property
    def end(self) -> np.ndarray:
        return self.points[0] if self.closed else self.points[-1]


def dedupe(points: np.ndarray, normals: np.ndarray, tol: float = 1e-6):
    """Drop points closer than ``tol`` to their predecessor."""
    if len(points) < 2:
        return points, normals
    keep = np.ones(len(points), bool)
    last = points[0]
    for i in range(1, len(points)):
        if np.linalg.norm(points[i] - last) > tol:
            last = points[i]
        else:
            keep[i] = False
    return points[keep], normals[keep]


@dataclass(eq=False)
class LayerToolpath:
    index: int
    items: list = field(default_factory=list)
    iso: float = 0.0

    @property
    def prints(self) -> list[Polyline]:
        return [p for p in self.items if p.is_print]

    @property
    def infill(self) -> list[Polyline]:
        return [p for p in self.items if p.kind == "infill"]

    @property
    def contours(self) -> list[Polyline]:
        return [p for p in self.items if p.kind == "contour"]

    @property
    def travels(self) -> list[Polyline]:
        return [p for p in self.items if p.kind == "travel"]

    def print_length(self) -> float:
        return sum(p.length() for p in self.prints)

    def travel_length(self) -> float:
        return sum(p.length() for p in self.travels)


@dataclass(eq=False)
class ToolpathProgram:
    layers: list = field(default_factory=list)

    def records(self):
        """Yield ``(layer_index, kind, x, y, z, nx, ny, nz)`` with kind PRINT/TRAVEL."""
        for layer in self.layers:
            for item in layer.items:
                pts, nrm = item.path_points()
                kind = "TRAVEL" if item.kind == "travel" else "PRINT"
                for p, n in zip(pts, nrm):
                    yield (layer.index, kind, *p, *n)

    def validate(self) -> None:
        isos = [layer.iso for layer in self.layers]
        if any(b < a for a, b in zip(isos, isos[1:])):
            raise ValueError("layers must be ordered by increasing iso-value")
        for rec in self.records():
            if not np.all(np.isfinite(rec[2:])):
                raise ValueError(f"non-finite toolpath record in layer {rec[0]}")


def _fmt(x: float) -> str:
    s = f"{x:.6f}"
    return "0.000000" if s == "-0.000000" else s


def write_toolpath(program: ToolpathProgram, path) -> str:
    program.validate()
    path = os.fspath(path)
    lines = [HEADER]
    for layer in program.layers:
        lines.append(f"LAYER {layer.index}")
        for item in layer.items:
            pts, nrm = item.path_points()
            kind = "TRAVEL" if item.kind == "travel" else "PRINT"
            for p, n in zip(pts.tolist(), nrm.tolist()):
                lines.append(" ".join([kind, *map(_fmt, p), *map(_fmt, n)]))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_toolpath(path) -> list[tuple]:
    """Parse a toolpath file into ``(layer, kind, x, y, z, nx, ny, nz)`` tuples."""
    out = []
    layer = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "LAYER":
                layer = int(parts[1])
            elif parts[0] in ("PRINT", "TRAVEL"):
                if layer is None or len(parts) != 7:
                    raise ValueError(f"{path}:{lineno}: malformed record")
                out.append((layer, parts[0], *map(float, parts[1:])))
            else:
                raise ValueError(f"{path}:{lineno}: unknown record {parts[0]!r}")
    return out

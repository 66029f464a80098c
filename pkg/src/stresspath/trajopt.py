"""Trajectory generation on one slice.

A scalar field is fitted so that its gradient follows the preprocessed
(orthogonal) stress flow; its isolines are therefore aligned with the stress.
The isolines are smoothed, trimmed against inset contours and chained into a
layer with travel moves.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.interpolate import make_smoothing_spline
from scipy.spatial import cKDTree

from .meshcore import build_operators, triangle_normals
from .numerics import DEFAULT_EPS_SCALE, solve_regularized_ls
from .slicing import Slice
from .stressflow import TangentFlow
from .toolpath import LayerToolpath, Polyline, dedupe

logger = logging.getLogger(__name__)


class DegenerateFieldError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ScalarFieldOnSlice:
    """Calibrated trajectory-generating field.

    ``raw`` is the least-squares solution before calibration and ``scale``
    the factor applied to it (median face gradient norm becomes 1).
    """

    values: np.ndarray
    residual: float
    raw: np.ndarray
    scale: float
    eps: float


def face_targets(slc: Slice, flow: TangentFlow) -> np.ndarray:
    """Mean of the three corner vectors, projected onto the face plane, unit length."""
    f = slc.surface.faces
    n = triangle_normals(slc.surface.vertices, f)
    t = flow.vectors[f].mean(axis=1)
    t -= np.einsum("ij,ij->i", t, n)[:, None] * n
    ln = np.linalg.norm(t, axis=1)
    ok = ln > 1e-12
    t[ok] /= ln[ok, None]
    t[~ok] = 0.0
    return t


def weighted_system(slc: Slice, flow: TangentFlow, area_weighted: bool = True):
    """Stacked gradient operator and targets, rows scaled by sqrt(face area)."""
    G, _ = build_operators(slc.surface)
    target = face_targets(slc, flow).ravel()
    if not area_weighted:
        return G.matrix, target
    w = np.repeat(np.sqrt(G.weights), 3)
    return sparse.diags(w) @ G.matrix, w * target


def fit_scalar_field(slc: Slice, flow: TangentFlow, eps: float | None = None, tol: float = 1e-10,
                     method: str = "cg", area_weighted: bool = True) -> ScalarFieldOnSlice:
    """Regularized least-squares fit ``min |G phi - F|^2 + eps |phi|^2``, then calibrate.

    Face rows are weighted by sqrt(area) so the discrete objective matches the
    surface integral. ``eps=None`` uses 1e-8 times the largest diagonal entry
    of the normal matrix.
    """
    if flow.stage != "preprocessed" or not flow.valid.all():
        raise ValueError("fit_scalar_field needs a complete preprocessed flow")
    Gw, tw = weighted_system(slc, flow, area_weighted)
    if eps is None:
        diag = np.asarray(Gw.multiply(Gw).sum(axis=0)).ravel()
        eps = DEFAULT_EPS_SCALE * float(diag.max())
    raw = solve_regularized_ls(Gw, tw, eps=eps, tol=tol, method=method)
    G, _ = build_operators(slc.surface)
    gn = np.linalg.norm(G.apply(raw), axis=1)
    med = float(np.median(gn))
    scale = 1.0 / med if med > 0 else 1.0
    values = raw * scale
    resid = float(np.sum((Gw @ values - tw) ** 2))
    return ScalarFieldOnSlice(values, resid, raw, scale, float(eps))


# ---------------------------------------------------------------------------
# Isolines
# ---------------------------------------------------------------------------

def _chain(seg_keys: np.ndarray) -> list[tuple[list[int], bool]]:
    """Chain directed segments (pairs of point keys) into paths of segment ids."""
    out_of: dict[int, list[int]] = {}
    into: dict[int, int] = {}
    for s, (a, b) in enumerate(seg_keys.tolist()):
        out_of.setdefault(a, []).append(s)
        into[b] = into.get(b, 0) + 1
    used = np.zeros(len(seg_keys), bool)
    paths = []

    def walk(s0):
        path = [s0]
        used[s0] = True
        cur = seg_keys[s0, 1]
        start = seg_keys[s0, 0]
        while True:
            nxt = [s for s in out_of.get(int(cur), []) if not used[s]]
            if not nxt:
                return path, bool(cur == start)
            s = nxt[0]
            used[s] = True
            path.append(s)
            cur = seg_keys[s, 1]
            if cur == start:
                return path, True

    # open paths start where nothing flows in
    for s in range(len(seg_keys)):
        if not used[s] and into.get(int(seg_keys[s, 0]), 0) == 0:
            paths.append(walk(s))
    for s in range(len(seg_keys)):
        if not used[s]:
            paths.append(walk(s))
    return paths


def isolines_at(slc: Slice, values, level: float) -> list[Polyline]:
    """Marching-triangles level curve, oriented with the gradient on its left."""
    v = slc.surface.vertices
    f = slc.surface.faces
    phi = np.asarray(values, float)
    fv = phi[f]
    above = fv >= level
    cnt = above.sum(axis=1)
    sel = np.flatnonzero((cnt == 1) | (cnt == 2))
    if sel.size == 0:
        return []
    ab = above[sel]
    lone = np.where(cnt[sel] == 1, np.argmax(ab, axis=1), np.argmax(~ab, axis=1))
    tri = f[sel]
    a = tri[np.arange(len(sel)), lone]
    b = tri[np.arange(len(sel)), (lone + 1) % 3]
    c = tri[np.arange(len(sel)), (lone + 2) % 3]
    n = len(phi)

    def cross(p, q):
        lo, hi = np.minimum(p, q), np.maximum(p, q)
        w = (level - phi[lo]) / (phi[hi] - phi[lo])
        key = np.where(w == 0.0, lo * n + lo, np.where(w == 1.0, hi * n + hi, lo * n + hi))
        pt = v[lo] * (1 - w)[:, None] + v[hi] * w[:, None]
        nm = slc.normals[lo] * (1 - w)[:, None] + slc.normals[hi] * w[:, None]
        return key, pt, nm

    k1, p1, n1 = cross(a, b)
    k2, p2, n2 = cross(a, c)

    # orient: gradient on the left when looking along the face normal
    P = v[tri]
    fn = np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0])
    e = p2 - p1
    g = (phi[c] - phi[a])[:, None] * np.cross(fn, v[b] - v[a]) - (phi[b] - phi[a])[:, None] * np.cross(fn, v[c] - v[a])
    flip = np.einsum("ij,ij->i", np.cross(fn, e), g) < 0
    keys = np.stack([np.where(flip, k2, k1), np.where(flip, k1, k2)], axis=1)
    pts = np.stack([np.where(flip[:, None], p2, p1), np.where(flip[:, None], p1, p2)], axis=1)
    nms = np.stack([np.where(flip[:, None], n2, n1), np.where(flip[:, None], n1, n2)], axis=1)

    good = keys[:, 0] != keys[:, 1]
    keys, pts, nms = keys[good], pts[good], nms[good]
    _, ui = np.unique(keys, axis=0, return_index=True)
    ui = np.sort(ui)
    keys, pts, nms = keys[ui], pts[ui], nms[ui]

    lines = []
    for path, closed in _chain(keys):
        p = np.vstack([pts[path, 0], pts[path[-1], 1][None]])
        q = np.vstack([nms[path, 0], nms[path[-1], 1][None]])
        if closed:
            p, q = p[:-1], q[:-1]
        p, q = dedupe(p, q)
        if closed and len(p) > 1 and np.linalg.norm(p[0] - p[-1]) <= 1e-6:
            p, q = p[:-1], q[:-1]
        if len(p) < 2:
            continue
        q = q / np.linalg.norm(q, axis=1, keepdims=True)
        lines.append(Polyline(p, q, closed=closed and len(p) >= 3, kind="infill"))
    return lines


def extract_isolines(slc: Slice, field: ScalarFieldOnSlice | np.ndarray, spacing: float = 0.4,
                     offset: float = 0.5) -> list[Polyline]:
    """Equally spaced isolines at ``min + offset * spacing + k * spacing``."""
    if not spacing > 0:
        raise ValueError(f"spacing must be > 0, got {spacing}")
    phi = field.values if isinstance(field, ScalarFieldOnSlice) else np.asarray(field, float)
    lo, hi = float(phi.min()), float(phi.max())
    if not hi - lo > 1e-12 * max(1.0, abs(hi)):
        raise DegenerateFieldError("degenerate scalar field: no variation on the slice")
    lines = []
    k = 0
    while True:
        level = lo + offset * spacing + k * spacing
        if level > hi:
            break
        for line in isolines_at(slc, phi, level):
            line.iso_index = k
            lines.append(line)
        k += 1
    return lines


# ---------------------------------------------------------------------------
# Smoothing and resampling
# ---------------------------------------------------------------------------

def polyline_distance(points, line_points, closed: bool = False, return_foot: bool = False):
    """Distance from each point to a polyline (segments, not just vertices).

    With ``return_foot`` also returns, per point, the segment index and the
    parameter in [0, 1] of the closest location.
    """
    P = np.atleast_2d(np.asarray(points, float))
    Q = np.asarray(line_points, float)
    if len(Q) == 1:
        d = np.linalg.norm(P - Q[0], axis=1)
        return (d, np.zeros(len(P), int), np.zeros(len(P))) if return_foot else d
    A = Q[:-1]
    B = Q[1:]
    if closed:
        A = np.vstack([A, Q[-1:]])
        B = np.vstack([B, Q[:1]])
    AB = B - A
    L2 = np.einsum("ij,ij->i", AB, AB)
    L2 = np.where(L2 > 0, L2, 1.0)
    dist = np.empty(len(P))
    seg = np.empty(len(P), dtype=np.int64)
    par = np.empty(len(P))
    chunk = max(1, 2_000_000 // max(len(A), 1))
    for s in range(0, len(P), chunk):
        p = P[s : s + chunk]
        t = np.clip(np.einsum("pij,ij->pi", p[:, None, :] - A[None], AB) / L2, 0.0, 1.0)
        foot = A[None] + t[..., None] * AB[None]
        d2 = np.einsum("pij,pij->pi", p[:, None, :] - foot, p[:, None, :] - foot)
        j = np.argmin(d2, axis=1)
        r = np.arange(len(p))
        dist[s : s + chunk] = np.sqrt(d2[r, j])
        seg[s : s + chunk] = j
        par[s : s + chunk] = t[r, j]
    if return_foot:
        return dist, seg, par
    return dist


def _arclength(p: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(p, axis=0), axis=1))])


def _spline_evaluator(s, y, lam, w):
    """Per-coordinate smoothing spline; ``lam = inf`` gives the weighted least-squares line."""
    if np.isinf(lam):
        ww = np.ones(len(s)) if w is None else w
        A = np.column_stack([np.ones_like(s), s]) * np.sqrt(ww)[:, None]
        coef = np.linalg.lstsq(A, y * np.sqrt(ww)[:, None], rcond=None)[0]
        return lambda u: coef[0] + np.outer(u, coef[1])
    splines = [make_smoothing_spline(s, y[:, k], w=w, lam=lam) for k in range(y.shape[1])]
    return lambda u: np.column_stack([sp(u) for sp in splines])


def _linear_evaluator(s, y):
    return lambda u: np.column_stack([np.interp(u, s, y[:, k]) for k in range(y.shape[1])])


def _resample_curve(evaluate, s_lo, s_hi, step, closed, dense=16):
    """Uniform arc-length samples of a parametric curve on [s_lo, s_hi]."""
    m = max(64, int(dense * (s_hi - s_lo) / max(step, 1e-9)))
    u = np.linspace(s_lo, s_hi, m + 1)
    c = evaluate(u)
    arc = _arclength(c)
    total = arc[-1]
    nseg = max(1, int(round(total / step)))
    if closed:
        nseg = max(3, nseg)
    target = np.linspace(0.0, total, nseg + 1)
    uu = np.interp(target, arc, u)
    return uu, total


def _lam_schedule(lam0: float):
    """Initial smoothing weight, then tenfold relaxations down to interpolation."""
    lam = lam0 if np.isfinite(lam0) else 1e4
    if np.isinf(lam0):
        yield lam0
    while lam > 1e-6:
        yield lam
        lam /= 10.0
    yield 0.0


def smooth_resample(line: Polyline, p: float = 0.95, step: float = 0.5,
                    max_deviation: float = 0.1) -> Polyline:
    """Cubic smoothing spline per coordinate, resampled at a uniform arc step.

    The spline minimizes ``p * sum|y - f|^2 + (1 - p) * int |f''|^2`` over the
    chord-length parameter (``p = 1`` interpolates, ``p = 0`` gives the
    least-squares line). Open lines keep their endpoints; closed lines are
    fitted on a three-fold copy so the middle period is effectively periodic.
    If the fit strays more than ``max_deviation`` from the input, the
    smoothing is relaxed tenfold until it complies, ending with plain linear
    resampling of the input.
    """
    if not step > 0:
        raise ValueError(f"step must be > 0, got {step}")
    if not 0 <= p <= 1:
        raise ValueError(f"smoothing parameter must lie in [0, 1], got {p}")
    pts, nrm = line.points, line.normals
    if line.closed and len(pts) > 1 and np.linalg.norm(pts[0] - pts[-1]) <= 1e-6:
        pts, nrm = pts[:-1], nrm[:-1]
    if len(pts) < 4:
        logger.warning("polyline with %d points is too short to smooth; returned unchanged", len(pts))
        return line
    if not line.closed and len(pts) < 5:
        # the spline fitter needs five samples; chord midpoints leave the geometry unchanged
        mid_p = 0.5 * (pts[1:] + pts[:-1])
        mid_n = 0.5 * (nrm[1:] + nrm[:-1])
        pts = np.insert(pts, np.arange(1, len(pts)), mid_p, axis=0)
        nrm = np.insert(nrm, np.arange(1, len(nrm)), mid_n, axis=0)
    lam0 = np.inf if p == 0 else (1.0 - p) / p

    if line.closed:
        ring = np.vstack([pts, pts[:1]])
        s1 = _arclength(ring)
        period = s1[-1]
        s = np.concatenate([s1[:-1] - period, s1[:-1], s1[:-1] + period, [2 * period]])
        tiled = np.vstack([pts, pts, pts, pts[:1]])
        ntiled = np.vstack([nrm, nrm, nrm, nrm[:1]])
        w = None
        lo, hi = 0.0, period
    else:
        s = _arclength(pts)
        tiled, ntiled = pts, nrm
        w = np.ones(len(pts))
        w[[0, -1]] = 1e8
        lo, hi = 0.0, s[-1]

    def sample(evaluate):
        uu, _ = _resample_curve(evaluate, lo, hi, step, line.closed)
        out = evaluate(uu)
        if line.closed:
            return out[:-1], uu[:-1]
        out[0], out[-1] = pts[0], pts[-1]
        return out, uu

    for lam in _lam_schedule(lam0):
        out, uu = sample(_spline_evaluator(s, tiled, lam, w))
        if polyline_distance(out, pts, closed=line.closed).max() <= max_deviation:
            break
    else:
        logger.warning("smoothing could not meet the deviation bound; using plain resampling")
        out, uu = sample(_linear_evaluator(s, tiled))

    on = _linear_evaluator(s, ntiled)(uu)
    on /= np.linalg.norm(on, axis=1, keepdims=True)
    out, on = dedupe(out, on)
    return Polyline(out, on, line.closed, line.kind, line.iso_index)


# ---------------------------------------------------------------------------
# Contours, trimming and sequencing
# ---------------------------------------------------------------------------

def boundary_segments(slc: Slice) -> tuple[np.ndarray, np.ndarray]:
    """Start/end points of every boundary edge of the slice."""
    be = slc.surface.boundary_edges()
    v = slc.surface.vertices
    return v[be[:, 0]], v[be[:, 1]]


def distance_to_segments(points, a, b) -> np.ndarray:
    """Distance from points to the nearest of a set of segments (KD-tree pruned)."""
    P = np.atleast_2d(np.asarray(points, float))
    if len(a) == 0:
        return np.full(len(P), np.inf)
    mid = 0.5 * (a + b)
    half = 0.5 * np.linalg.norm(b - a, axis=1).max()
    tree = cKDTree(mid)
    d0, _ = tree.query(P)
    out = np.empty(len(P))
    ab = b - a
    l2 = np.einsum("ij,ij->i", ab, ab)
    l2 = np.where(l2 > 0, l2, 1.0)
    cand_lists = tree.query_ball_point(P, d0 + half + 1e-12)
    for i, cand in enumerate(cand_lists):
        c = np.asarray(cand, dtype=np.int64)
        t = np.clip(np.einsum("ij,ij->i", P[i] - a[c], ab[c]) / l2[c], 0.0, 1.0)
        foot = a[c] + t[:, None] * ab[c]
        out[i] = np.sqrt(np.min(np.einsum("ij,ij->i", P[i] - foot, P[i] - foot)))
    return out


def offset_loop(points: np.ndarray, normals: np.ndarray, distance: float) -> np.ndarray:
    """Mitered inward offset of a closed loop wound with the interior on its left."""
    nxt = np.roll(points, -1, axis=0)
    prv = np.roll(points, 1, axis=0)
    t_out = nxt - points
    t_in = points - prv
    t_out /= np.linalg.norm(t_out, axis=1, keepdims=True)
    t_in /= np.linalg.norm(t_in, axis=1, keepdims=True)
    m_out = np.cross(normals, t_out)
    m_in = np.cross(normals, t_in)
    bis = m_in + m_out
    bl = np.linalg.norm(bis, axis=1)
    bis = np.where(bl[:, None] > 1e-9, bis / np.where(bl > 1e-9, bl, 1.0)[:, None], m_out)
    cosang = np.clip(np.einsum("ij,ij->i", bis, m_out), 0.33, 1.0)
    return points + bis * (distance / cosang)[:, None]


def contour_rings(slc: Slice, contour_count: int, spacing: float, smoothing: float | None = None,
                  step: float = 0.5) -> list[Polyline]:
    """Inset rings at ``(k + 0.5) * spacing`` from every boundary loop, outside-in."""
    if contour_count <= 0:
        return []
    v = slc.surface.vertices
    nrm = slc.normals
    loops = slc.surface.boundary_loops()
    a, b = boundary_segments(slc)
    rings = []
    for k in range(contour_count):
        d = (k + 0.5) * spacing
        for li, loop in enumerate(loops):
            p = offset_loop(v[loop], nrm[loop], d)
            keep = distance_to_segments(p, a, b) >= 0.9 * d
            if keep.sum() < 3 or keep.mean() < 0.5:
                logger.warning("slice %d: contour %d of boundary loop %d collapsed; skipped", slc.index, k, li)
                continue
            pts, nn = dedupe(p[keep], nrm[loop][keep])
            if len(pts) > 1 and np.linalg.norm(pts[0] - pts[-1]) <= 1e-6:
                pts, nn = pts[:-1], nn[:-1]
            if len(pts) < 3:
                continue
            ring = Polyline(pts, nn, closed=True, kind="contour", iso_index=k)
            if ring.length() < 2 * spacing:
                logger.warning("slice %d: contour %d of boundary loop %d too short; skipped", slc.index, k, li)
                continue
            if smoothing is not None and len(pts) >= 4:
                ring = smooth_resample(ring, smoothing, step)
                ring.kind = "contour"
            rings.append(ring)
    return rings


def trim_line(line: Polyline, dist: np.ndarray, limit: float) -> list[Polyline]:
    """Split a polyline where its boundary distance drops below ``limit``."""
    pts, nrm = line.path_points() if line.closed else (line.points, line.normals)
    dist = np.append(dist, dist[:1]) if line.closed else dist
    inside = dist >= limit
    if inside.all():
        return [line]
    pieces = []
    cur_p, cur_n = [], []

    def cut(i, j):
        t = (limit - dist[i]) / (dist[j] - dist[i])
        q = pts[i] + t * (pts[j] - pts[i])
        m = nrm[i] + t * (nrm[j] - nrm[i])
        return q, m / np.linalg.norm(m)

    for i in range(len(pts)):
        if inside[i]:
            if not cur_p and i > 0 and not inside[i - 1]:
                q, m = cut(i - 1, i)
                cur_p.append(q)
                cur_n.append(m)
            cur_p.append(pts[i])
            cur_n.append(nrm[i])
        elif cur_p:
            q, m = cut(i - 1, i)
            cur_p.append(q)
            cur_n.append(m)
            pieces.append((np.array(cur_p), np.array(cur_n)))
            cur_p, cur_n = [], []
    if cur_p:
        pieces.append((np.array(cur_p), np.array(cur_n)))
    if line.closed and len(pieces) > 1 and inside[0] and inside[-1]:
        last = pieces.pop()
        first = pieces[0]
        pieces[0] = (np.vstack([last[0], first[0][1:]]), np.vstack([last[1], first[1][1:]]))
    out = []
    for p, n in pieces:
        p, n = dedupe(p, n)
        if len(p) >= 2:
            out.append(Polyline(p, n, False, line.kind, line.iso_index))
    return out


def _travel_len(order):
    return sum(float(np.linalg.norm(b.start - a.end)) for a, b in zip(order, order[1:]))


def chain_lines(lines: list[Polyline], start=None) -> list[Polyline]:
    """Greedy nearest-endpoint ordering (lines may be reversed).

    Falls back to the input order when that yields less travel.
    """
    if not lines:
        return []
    remaining = list(range(len(lines)))
    order = []
    if start is None:
        first = lines[0]
        remaining.remove(0)
        order.append(first)
        pos = first.end
    else:
        pos = np.asarray(start, float)
    while remaining:
        best, best_d, best_rev = None, np.inf, False
        for i in remaining:
            ln = lines[i]
            d0 = np.linalg.norm(ln.start - pos)
            d1 = np.inf if ln.closed else np.linalg.norm(ln.end - pos)
            if d0 < best_d:
                best, best_d, best_rev = i, d0, False
            if d1 < best_d:
                best, best_d, best_rev = i, d1, True
        remaining.remove(best)
        ln = lines[best].reversed() if best_rev else lines[best]
        order.append(ln)
        pos = ln.end
    identity = list(lines)
    lead = [] if start is None else [Polyline(np.asarray(start, float)[None], np.array([[0.0, 0.0, 1.0]]))]
    if _travel_len(lead + identity) < _travel_len(lead + order):
        return identity
    return order


def travel_move(a: Polyline, b: Polyline, lift: float) -> Polyline | None:
    """Lift off along the end normal, cross over, and descend onto the next start."""
    p0, n0 = a.end, (a.normals[0] if a.closed else a.normals[-1])
    p1, n1 = b.start, b.normals[0]
    if np.linalg.norm(p1 - p0) <= 1e-6:
        return None
    pts = np.array([p0, p0 + lift * n0, p1 + lift * n1, p1])
    nrm = np.array([n0, n0, n1, n1])
    pts, nrm = dedupe(pts, nrm)
    if len(pts) < 2:
        return None
    return Polyline(pts, nrm, False, "travel")


def build_layer_path(lines: list[Polyline], slc: Slice, contour_count: int = 2, spacing: float = 0.4,
                     lift: float = 0.1, smoothing: float | None = None, step: float = 0.5) -> LayerToolpath:
    """Contours (outside-in), trimmed infill chained greedily, travel moves in between."""
    if contour_count < 0:
        raise ValueError("contour_count must be >= 0")
    contours = contour_rings(slc, contour_count, spacing, smoothing, step)
    infill = list(lines)
    if contour_count > 0:
        a, b = boundary_segments(slc)
        limit = contour_count * spacing
        trimmed = []
        for ln in infill:
            trimmed.extend(trim_line(ln, distance_to_segments(ln.points, a, b), limit))
        infill = [ln for ln in trimmed if ln.length() >= 1e-3]
    start = contours[-1].end if contours else None
    ordered = contours + chain_lines(infill, start=start)
    items = []
    for i, ln in enumerate(ordered):
        if i > 0:
            tr = travel_move(ordered[i - 1], ln, lift)
            if tr is not None:
                items.append(tr)
        items.append(ln)
    return LayerToolpath(slc.index, items, slc.iso)


def generate_layer(slc: Slice, flow: TangentFlow, spacing: float = 0.4, contour_count: int = 2,
                   p: float = 0.95, step: float = 0.5, max_deviation: float = 0.1, lift: float = 0.1,
                   eps: float | None = None, tol: float = 1e-10, method: str = "cg"):
    """Field fit, isolines, smoothing and layer assembly for one slice."""
    field = fit_scalar_field(slc, flow, eps=eps, tol=tol, method=method)
    raw_lines = extract_isolines(slc, field, spacing)
    smooth = [smooth_resample(ln, p, step, max_deviation) for ln in raw_lines]
    layer = build_layer_path(smooth, slc, contour_count, spacing, lift, None, step)
    return field, layer

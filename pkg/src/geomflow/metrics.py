"""Shape metrics and convergence bookkeeping.

The workhorse metric is the manifold distance, the area (2D) or volume (3D)
of the symmetric difference of the enclosed regions:

    M(S1, S2) = |O1| + |O2| - 2 |O1 cap O2|.

In 2D the intersection is computed by exact polygon clipping.  Two independent
oracles certify it: a radial integration that is exact for star-shaped
polygons, and a seeded Monte Carlo estimate.  In 3D exact booleans are out of
scope and the metric itself is Monte Carlo, with point-in-solid decided by the
generalized winding number; it returns its own standard error.

The Hausdorff distance (vertices of one shape against the elements of the
other, both directions) serves as the shape metric where symmetric-difference
volumes are too expensive or too noisy.

Convergence tables pair time steps with errors and report the observed order
log(E1/E2)/log(tau1/tau2) between consecutive rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree
from shapely.geometry import Polygon

from .curve import CurveState
from .errors import NonPositiveError, NonSimplePolygonError, ZeroInitialMeasureError
from .surface import SurfaceState

__all__ = [
    "manifold_distance_2d",
    "radial_symmetric_difference",
    "montecarlo_symmetric_difference_2d",
    "manifold_distance_3d",
    "hausdorff_distance",
    "ErrorTableRow",
    "convergence_table",
    "table_to_csv",
    "table_from_csv",
    "format_table",
    "relative_change_series",
    "normalized_series",
]

_Positions = Union[CurveState, np.ndarray]


def _positions_of(curve: _Positions) -> np.ndarray:
    if isinstance(curve, CurveState):
        return curve.positions
    return np.asarray(curve, dtype=float)


def _polygon_of(curve: _Positions) -> Polygon:
    poly = Polygon(_positions_of(curve))
    if not poly.is_valid:
        raise NonSimplePolygonError("polygon is self-intersecting or degenerate")
    return poly


def manifold_distance_2d(curve1: _Positions, curve2: _Positions) -> float:
    """Symmetric-difference area |O1| + |O2| - 2|O1 cap O2| via exact clipping."""
    p1 = _polygon_of(curve1)
    p2 = _polygon_of(curve2)
    return p1.area + p2.area - 2.0 * p1.intersection(p2).area


# ---------------------------------------------------------------------------
# Star-shaped radial oracle


class _StarBoundary:
    """Radius-at-angle evaluator for a polygon star-shaped about the origin."""

    def __init__(self, positions: np.ndarray):
        pos = np.asarray(positions, dtype=float)
        area2 = np.dot(pos[:, 0], np.roll(pos[:, 1], -1)) - np.dot(pos[:, 1], np.roll(pos[:, 0], -1))
        if area2 < 0:
            pos = pos[::-1]  # counterclockwise
        angles = np.arctan2(pos[:, 1], pos[:, 0])
        steps = np.diff(angles, append=angles[:1])
        steps = np.mod(steps, 2.0 * np.pi)
        if np.any(steps <= 0) or np.any(steps >= np.pi) or abs(steps.sum() - 2 * np.pi) > 1e-9:
            raise ValueError("polygon is not star-shaped about the origin")
        self.base = angles[0]
        self.unwrapped = self.base + np.concatenate([[0.0], np.cumsum(steps)])
        self.vertices = np.vstack([pos, pos[:1]])
        self.vertex_angles = angles

    def point_at(self, theta: np.ndarray) -> np.ndarray:
        """Boundary point on the ray at angle theta (vectorized)."""
        t = np.mod(theta - self.base, 2.0 * np.pi) + self.base
        j = np.clip(np.searchsorted(self.unwrapped, t, side="right") - 1, 0,
                    len(self.vertices) - 2)
        a = self.vertices[j]
        b = self.vertices[j + 1]
        d = np.stack([np.cos(t), np.sin(t)], axis=-1)
        cr_ad = a[..., 0] * d[..., 1] - a[..., 1] * d[..., 0]
        cr_bd = b[..., 0] * d[..., 1] - b[..., 1] * d[..., 0]
        s = cr_ad / (cr_ad - cr_bd)
        return a + s[..., None] * (b - a)


def _segment_intersection_angles(pos1: np.ndarray, pos2: np.ndarray) -> np.ndarray:
    """Angles (about the origin) of all proper edge-edge intersection points."""
    a = pos1
    b = np.roll(pos1, -1, axis=0)
    c = pos2
    d = np.roll(pos2, -1, axis=0)
    r = (b - a)[:, None, :]
    s = (d - c)[None, :, :]
    qp = c[None, :, :] - a[:, None, :]
    denom = r[..., 0] * s[..., 1] - r[..., 1] * s[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (qp[..., 0] * s[..., 1] - qp[..., 1] * s[..., 0]) / denom
        u = (qp[..., 0] * r[..., 1] - qp[..., 1] * r[..., 0]) / denom
    hit = (np.abs(denom) > 0) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
    points = a[:, None, :] + t[..., None] * r
    pts = points[hit]
    return np.arctan2(pts[:, 1], pts[:, 0])


def radial_symmetric_difference(curve1: _Positions, curve2: _Positions) -> float:
    """Exact symmetric-difference area for polygons star-shaped about the origin.

    Independent of the clipping route: the circle of directions is cut at every
    vertex angle and every boundary-crossing angle, so that inside each wedge
    both boundaries are single non-crossing chords and the area difference is a
    difference of two exact triangle areas.
    """
    pos1 = _positions_of(curve1)
    pos2 = _positions_of(curve2)
    star1 = _StarBoundary(pos1)
    star2 = _StarBoundary(pos2)
    angles = np.concatenate([
        star1.vertex_angles, star2.vertex_angles,
        _segment_intersection_angles(pos1, pos2),
    ])
    angles = np.sort(np.mod(angles, 2.0 * np.pi))
    keep = np.concatenate([[True], np.diff(angles) > 1e-13])
    angles = angles[keep]
    lo = angles
    hi = np.concatenate([angles[1:], [angles[0] + 2.0 * np.pi]])
    q1a, q1b = star1.point_at(lo), star1.point_at(hi)
    q2a, q2b = star2.point_at(lo), star2.point_at(hi)
    wedge1 = 0.5 * (q1a[:, 0] * q1b[:, 1] - q1a[:, 1] * q1b[:, 0])
    wedge2 = 0.5 * (q2a[:, 0] * q2b[:, 1] - q2a[:, 1] * q2b[:, 0])
    return float(np.abs(wedge1 - wedge2).sum())


# ---------------------------------------------------------------------------
# Monte Carlo oracles


def _points_in_polygon(points: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Even-odd crossing test, vectorized over points."""
    px, py = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    x1, y1 = positions[:, 0], positions[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    for j in range(len(positions)):
        if y1[j] == y2[j]:
            continue
        straddles = (y1[j] > py) != (y2[j] > py)
        xint = x1[j] + (py - y1[j]) * (x2[j] - x1[j]) / (y2[j] - y1[j])
        inside ^= straddles & (px < xint)
    return inside


def _joint_bbox(a: np.ndarray, b: np.ndarray, margin: float = 1e-9):
    lo = np.minimum(a.min(axis=0), b.min(axis=0)) - margin
    hi = np.maximum(a.max(axis=0), b.max(axis=0)) + margin
    return lo, hi


def montecarlo_symmetric_difference_2d(curve1: _Positions, curve2: _Positions,
                                       n_samples: int = 1_000_000,
                                       seed: int = 0) -> Tuple[float, float]:
    """Seeded Monte Carlo estimate of the symmetric-difference area.

    Returns (estimate, standard error); deterministic for a fixed seed.
    """
    pos1 = _positions_of(curve1)
    pos2 = _positions_of(curve2)
    lo, hi = _joint_bbox(pos1, pos2)
    box_area = float(np.prod(hi - lo))
    rng = np.random.Generator(np.random.Philox(seed))
    hits = 0
    remaining = n_samples
    while remaining > 0:
        chunk = min(remaining, 1 << 16)
        pts = lo + rng.random((chunk, 2)) * (hi - lo)
        diff = _points_in_polygon(pts, pos1) ^ _points_in_polygon(pts, pos2)
        hits += int(diff.sum())
        remaining -= chunk
    p = hits / n_samples
    estimate = box_area * p
    std_error = box_area * np.sqrt(max(p * (1.0 - p), 0.0) / n_samples)
    return estimate, std_error


def _winding_inside(points: np.ndarray, state: SurfaceState) -> np.ndarray:
    """Generalized winding number > 1/2, summed from signed solid angles."""
    tri = state.vertices[state.triangles]  # (J, 3, 3)
    inside = np.zeros(len(points), dtype=bool)
    # Chunk so the (chunk, J, 3) intermediates stay within ~100 MB.
    chunk = max(1, int(1.0e6 / max(1, len(tri))))
    for start in range(0, len(points), chunk):
        p = points[start:start + chunk]
        a = tri[None, :, 0, :] - p[:, None, :]
        b = tri[None, :, 1, :] - p[:, None, :]
        c = tri[None, :, 2, :] - p[:, None, :]
        la = np.linalg.norm(a, axis=2)
        lb = np.linalg.norm(b, axis=2)
        lc = np.linalg.norm(c, axis=2)
        num = np.einsum("pjd,pjd->pj", a, np.cross(b, c))
        den = (la * lb * lc + np.einsum("pjd,pjd->pj", a, b) * lc
               + np.einsum("pjd,pjd->pj", b, c) * la
               + np.einsum("pjd,pjd->pj", c, a) * lb)
        omega = 2.0 * np.arctan2(num, den)
        winding = omega.sum(axis=1) / (4.0 * np.pi)
        inside[start:start + chunk] = np.abs(winding) > 0.5
    return inside


def manifold_distance_3d(surface1: SurfaceState, surface2: SurfaceState,
                         n_samples: int = 1_000_000,
                         seed: int = 0) -> Tuple[float, float]:
    """Monte Carlo symmetric-difference volume of two closed surfaces.

    Point-in-solid is decided by the generalized winding number, so the test
    is robust for any closed oriented mesh.  Returns (estimate, standard
    error); deterministic for a fixed seed.
    """
    lo, hi = _joint_bbox(surface1.vertices, surface2.vertices)
    box_volume = float(np.prod(hi - lo))
    rng = np.random.Generator(np.random.Philox(seed))
    hits = 0
    remaining = n_samples
    while remaining > 0:
        chunk = min(remaining, 1 << 15)
        pts = lo + rng.random((chunk, 3)) * (hi - lo)
        diff = _winding_inside(pts, surface1) ^ _winding_inside(pts, surface2)
        hits += int(diff.sum())
        remaining -= chunk
    p = hits / n_samples
    estimate = box_volume * p
    std_error = box_volume * np.sqrt(max(p * (1.0 - p), 0.0) / n_samples)
    return estimate, std_error


# ---------------------------------------------------------------------------
# Hausdorff distance


def _point_segment_min(points: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Distance from each point to the closed polygon boundary (all segments)."""
    a = positions
    b = np.roll(positions, -1, axis=0)
    seg = b - a
    seg_len2 = np.maximum(np.einsum("md,md->m", seg, seg), 1e-300)
    best = np.full(len(points), np.inf)
    chunk = max(1, int(4.0e6 / len(a)))
    for start in range(0, len(points), chunk):
        p = points[start:start + chunk]
        w = p[:, None, :] - a[None, :, :]
        t = np.clip(np.einsum("pmd,md->pm", w, seg) / seg_len2, 0.0, 1.0)
        diff = w - t[..., None] * seg[None, :, :]
        d = np.sqrt(np.einsum("pmd,pmd->pm", diff, diff))
        best[start:start + chunk] = d.min(axis=1)
    return best


def _point_triangle_distance(points: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Exact distances for paired points (n, 3) and triangles (n, 3, 3)."""
    q0, q1, q2 = tri[:, 0], tri[:, 1], tri[:, 2]
    e0 = q1 - q0
    e1 = q2 - q0
    w = points - q0
    a = np.einsum("nd,nd->n", e0, e0)
    b = np.einsum("nd,nd->n", e0, e1)
    c = np.einsum("nd,nd->n", e1, e1)
    d0 = np.einsum("nd,nd->n", w, e0)
    d1 = np.einsum("nd,nd->n", w, e1)
    det = np.maximum(a * c - b * b, 1e-300)
    s = (c * d0 - b * d1) / det
    t = (a * d1 - b * d0) / det
    inside = (s >= 0) & (t >= 0) & (s + t <= 1)
    foot = q0 + s[:, None] * e0 + t[:, None] * e1
    d_plane = np.linalg.norm(points - foot, axis=1)

    def edge_dist(pa, pb):
        seg = pb - pa
        len2 = np.maximum(np.einsum("nd,nd->n", seg, seg), 1e-300)
        u = np.clip(np.einsum("nd,nd->n", points - pa, seg) / len2, 0.0, 1.0)
        return np.linalg.norm(points - (pa + u[:, None] * seg), axis=1)

    d_edges = np.minimum(np.minimum(edge_dist(q0, q1), edge_dist(q1, q2)),
                         edge_dist(q2, q0))
    return np.where(inside, d_plane, d_edges)


def _directed_to_mesh(points: np.ndarray, state: SurfaceState) -> float:
    """max over points of the distance to the closest triangle of state."""
    tri = state.vertices[state.triangles]
    centroids = tri.mean(axis=1)
    radius = np.linalg.norm(tri - centroids[:, None, :], axis=2).max()
    upper = cKDTree(state.vertices).query(points)[0]
    balls = cKDTree(centroids).query_ball_point(points, upper + radius + 1e-12)
    pt_idx = np.concatenate([np.full(len(lst), i) for i, lst in enumerate(balls)])
    tri_idx = np.concatenate([np.asarray(lst, dtype=np.int64) for lst in balls])
    dists = _point_triangle_distance(points[pt_idx], tri[tri_idx])
    best = upper.copy()  # vertex distance is always an upper bound
    np.minimum.at(best, pt_idx, dists)
    return float(best.max())


def hausdorff_distance(shape1, shape2) -> float:
    """Symmetric Hausdorff distance between two curves or two surfaces.

    Computed as the max over vertices of one shape of the exact distance to
    the closest boundary element (segment or triangle) of the other, in both
    directions.
    """
    if isinstance(shape1, CurveState) and isinstance(shape2, CurveState):
        d12 = _point_segment_min(shape1.positions, shape2.positions).max()
        d21 = _point_segment_min(shape2.positions, shape1.positions).max()
        return float(max(d12, d21))
    if isinstance(shape1, SurfaceState) and isinstance(shape2, SurfaceState):
        return max(_directed_to_mesh(shape1.vertices, shape2),
                   _directed_to_mesh(shape2.vertices, shape1))
    raise TypeError("hausdorff_distance expects two CurveStates or two SurfaceStates")


# ---------------------------------------------------------------------------
# Convergence tables and normalized diagnostic series


@dataclass(frozen=True)
class ErrorTableRow:
    """One row of a convergence study: step size, error, observed order."""

    tau: float
    error: float
    order: Optional[float] = None


def convergence_table(entries: Sequence[Tuple[float, float]]) -> List[ErrorTableRow]:
    """Orders between consecutive (tau, error) rows; tau strictly decreasing."""
    if not entries:
        raise ValueError("need at least one (tau, error) entry")
    taus = [float(t) for t, _ in entries]
    errors = [float(e) for _, e in entries]
    if any(t2 >= t1 for t1, t2 in zip(taus, taus[1:])) or taus[-1] <= 0:
        raise ValueError("tau values must be positive and strictly decreasing")
    for e in errors:
        if not e > 0:
            raise NonPositiveError(f"errors must be positive, got {e}")
    rows = [ErrorTableRow(taus[0], errors[0])]
    for (t1, e1), (t2, e2) in zip(entries, entries[1:]):
        order = float(np.log(e1 / e2) / np.log(t1 / t2))
        rows.append(ErrorTableRow(float(t2), float(e2), order))
    return rows


def table_to_csv(rows: Sequence[ErrorTableRow], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("tau,error,order\n")
        for row in rows:
            order = "" if row.order is None else f"{row.order:.17g}"
            fh.write(f"{row.tau:.17g},{row.error:.17g},{order}\n")


def table_from_csv(path) -> List[ErrorTableRow]:
    rows: List[ErrorTableRow] = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "tau,error,order":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            if not line.strip():
                continue
            tau, error, order = line.strip().split(",")
            rows.append(ErrorTableRow(float(tau), float(error),
                                      float(order) if order else None))
    return rows


def format_table(rows: Sequence[ErrorTableRow]) -> str:
    """Aligned plain-text rendering of a convergence table."""
    lines = [f"{'tau':>12}  {'error':>14}  {'order':>7}"]
    for row in rows:
        order = "-" if row.order is None else f"{row.order:7.3f}"
        lines.append(f"{row.tau:>12.6g}  {row.error:>14.6e}  {order:>7}")
    return "\n".join(lines)


def relative_change_series(values: np.ndarray) -> np.ndarray:
    """(v(t) - v(0)) / v(0); the relative area or volume loss of a run."""
    values = np.asarray(values, dtype=float)
    if values.size == 0 or values[0] == 0.0:
        raise ZeroInitialMeasureError("initial value is zero; cannot normalize")
    return (values - values[0]) / values[0]


def normalized_series(values: np.ndarray) -> np.ndarray:
    """v(t) / v(0); normalized perimeter or surface area."""
    values = np.asarray(values, dtype=float)
    if values.size == 0 or values[0] == 0.0:
        raise ZeroInitialMeasureError("initial value is zero; cannot normalize")
    return values / values[0]

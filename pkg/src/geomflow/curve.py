"""Closed polygonal curves and their discrete geometry.

Conventions
-----------
A curve is a closed polygon with vertices X_0, ..., X_{N-1} traversed
*clockwise*; under the usual counter-clockwise-positive shoelace rule its
signed area is negative.  Edge j joins vertex j-1 to vertex j (indices mod N),
so the edges adjacent to vertex i are edge i (incoming) and edge i+1
(outgoing).

With h_j = X_j - X_{j-1} the unit outward normal on edge j is

    n_j = -perp(h_j) / |h_j|,   perp((x, y)) = (y, -x),

i.e. perp is the clockwise quarter turn; for a clockwise polygon this points
out of the enclosed region.  Convexity is nowhere assumed.

The mass-lumped inner product of two piecewise linear (or piecewise constant
per edge, one-sided) fields u, v is

    (u, v)^h = 1/2 * sum_j |h_j| [ (u.v)(start of edge j) + (u.v)(end of edge j) ],

which for vertex fields collapses to sum_i m_i u_i.v_i with the vertex mass
m_i = (|h_i| + |h_{i+1}|)/2.  The first-derivative (stiffness) product is

    (d_s u, d_s v) = sum_j (u_j - u_{j-1}).(v_j - v_{j-1}) / |h_j|.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateEdgeError

__all__ = [
    "CurveState",
    "EdgeGeometry",
    "edge_geometry",
    "lumped_inner",
    "stiffness_inner",
    "signed_area",
    "polygon_area",
    "polygon_perimeter",
    "mesh_ratio",
    "vertex_masses",
    "vertex_normal_weights",
    "generate_circle",
    "generate_ellipse",
    "generate_flower",
    "generate_curve",
    "validate_orientation",
    "save_curve_csv",
    "load_curve_csv",
]

#: Edges shorter than this fraction of the total perimeter are degenerate.
DEGENERATE_EDGE_REL = 1e-14


@dataclass
class CurveState:
    """Vertex positions of a closed polygon, with optional curvature field.

    positions : (N, 2) float array, clockwise traversal.
    curvature : optional (N,) vertex curvature produced by the flow solvers.
    time : simulation time the state belongs to.
    """

    positions: np.ndarray
    curvature: Optional[np.ndarray] = None
    time: float = 0.0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise ValueError("positions must have shape (N, 2)")
        if self.positions.shape[0] < 3:
            raise ValueError("a closed polygon needs at least 3 vertices")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("positions must be finite")
        if self.curvature is not None:
            self.curvature = np.asarray(self.curvature, dtype=float)
            if self.curvature.shape != (self.positions.shape[0],):
                raise ValueError("curvature must have shape (N,)")

    @property
    def n_vertices(self) -> int:
        return self.positions.shape[0]


@dataclass
class EdgeGeometry:
    """Per-edge vectors h_j, lengths |h_j| and unit outward normals n_j."""

    vectors: np.ndarray  # (N, 2)
    lengths: np.ndarray  # (N,)
    normals: np.ndarray  # (N, 2)
    total_length: float = field(init=False)

    def __post_init__(self):
        self.total_length = float(self.lengths.sum())


def edge_geometry(state: CurveState) -> EdgeGeometry:
    """Compute edge vectors, lengths and outward normals of a curve.

    Raises DegenerateEdgeError when some edge is shorter than
    DEGENERATE_EDGE_REL times the perimeter.
    """
    x = state.positions
    vectors = x - np.roll(x, 1, axis=0)  # h_j = X_j - X_{j-1}
    lengths = np.hypot(vectors[:, 0], vectors[:, 1])
    total = float(lengths.sum())
    if lengths.min(initial=np.inf) <= DEGENERATE_EDGE_REL * total:
        j = int(np.argmin(lengths))
        raise DegenerateEdgeError(
            f"edge {j} has length {lengths[j]:.3e} (perimeter {total:.3e})"
        )
    normals = np.empty_like(vectors)
    normals[:, 0] = -vectors[:, 1]
    normals[:, 1] = vectors[:, 0]
    normals /= lengths[:, None]
    return EdgeGeometry(vectors=vectors, lengths=lengths, normals=normals)


def _edge_sided(values: np.ndarray, onesided: bool) -> np.ndarray:
    """Bring a field to per-edge (N, 2[, d]) one-sided layout.

    Vertex fields are (N,) scalars or (N, d) vectors; one-sided fields carry
    an explicit side axis after the edge axis, value [j, 0] living at the
    start of edge j (vertex j-1 side) and [j, 1] at its end (vertex j side).
    """
    values = np.asarray(values, dtype=float)
    if onesided:
        if values.ndim not in (2, 3) or values.shape[1] != 2:
            raise ValueError("one-sided fields must have shape (N, 2) or (N, 2, d)")
        return values
    if values.ndim not in (1, 2):
        raise ValueError("vertex fields must have shape (N,) or (N, d)")
    start = np.roll(values, 1, axis=0)
    return np.stack([start, values], axis=1)


def lumped_inner(state: CurveState, u, v, *, u_onesided: bool = False,
                 v_onesided: bool = False) -> float:
    """Mass-lumped L2 inner product (u, v)^h on the curve.

    Scalar fields pair by multiplication, vector fields by the dot product.
    Per-edge one-sided values (e.g. anything involving the piecewise constant
    normal) are accepted via the *_onesided flags.
    """
    geom = edge_geometry(state)
    ue = _edge_sided(u, u_onesided)
    ve = _edge_sided(v, v_onesided)
    if ue.ndim != ve.ndim:
        raise ValueError("cannot pair a scalar field with a vector field")
    prod = ue * ve if ue.ndim == 2 else np.einsum("jsd,jsd->js", ue, ve)
    return float(0.5 * np.sum(geom.lengths[:, None] * prod))


def stiffness_inner(state: CurveState, u, v) -> float:
    """First-derivative product sum_j (u_j-u_{j-1}).(v_j-v_{j-1})/|h_j|."""
    geom = edge_geometry(state)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    du = u - np.roll(u, 1, axis=0)
    dv = v - np.roll(v, 1, axis=0)
    prod = du * dv if u.ndim == 1 else np.sum(du * dv, axis=1)
    return float(np.sum(prod / geom.lengths))


def signed_area(state: CurveState) -> float:
    """Shoelace area, counter-clockwise positive (so clockwise curves are negative)."""
    x = state.positions
    xn = np.roll(x, -1, axis=0)
    return float(0.5 * np.sum(x[:, 0] * xn[:, 1] - xn[:, 0] * x[:, 1]))


def polygon_area(state: CurveState) -> float:
    """Enclosed area A(Gamma) >= 0."""
    return abs(signed_area(state))


def polygon_perimeter(state: CurveState) -> float:
    return edge_geometry(state).total_length


def mesh_ratio(state: CurveState) -> float:
    """Mesh quality indicator Psi = max_j |h_j| / min_j |h_j| (>= 1)."""
    lengths = edge_geometry(state).lengths
    return float(lengths.max() / lengths.min())


def vertex_masses(geom: EdgeGeometry) -> np.ndarray:
    """Lumped vertex masses m_i = (|h_i| + |h_{i+1}|)/2."""
    return 0.5 * (geom.lengths + np.roll(geom.lengths, -1))


def vertex_normal_weights(geom: EdgeGeometry) -> np.ndarray:
    """Lumped normal weights w_i = (|h_i| n_i + |h_{i+1}| n_{i+1})/2.

    These are the coefficients the mass-lumped product (phi_i, f n)^h assigns
    to the vertex value f_i, and the discrete analogue of "normal times mass".
    """
    weighted = geom.lengths[:, None] * geom.normals
    return 0.5 * (weighted + np.roll(weighted, -1, axis=0))


def _clockwise_samples(n: int) -> np.ndarray:
    """Parameter values rho_j = j/N, traversed so the polygon winds clockwise."""
    return -np.arange(n) / n


def generate_circle(n: int, radius: float = 1.0, time: float = 0.0) -> CurveState:
    """Clockwise regular N-gon inscribed in the circle of given radius."""
    if n < 3:
        raise ValueError("need at least 3 vertices")
    theta = 2.0 * np.pi * _clockwise_samples(n)
    pts = radius * np.column_stack([np.cos(theta), np.sin(theta)])
    return CurveState(positions=pts, time=time)


def generate_ellipse(n: int, a: float = 2.0, b: float = 1.0) -> CurveState:
    """Clockwise polygon on the ellipse x^2/a^2 + y^2/b^2 = 1, uniform in parameter."""
    if n < 3:
        raise ValueError("need at least 3 vertices")
    theta = 2.0 * np.pi * _clockwise_samples(n)
    pts = np.column_stack([a * np.cos(theta), b * np.sin(theta)])
    return CurveState(positions=pts)


def generate_flower(n: int, petals: int = 6, base: float = 2.0,
                    amplitude: float = 1.0) -> CurveState:
    """Clockwise flower curve r(rho) = base + amplitude*cos(2*petals*pi*rho).

    The default is the 6-petal benchmark shape
    X(rho) = ((2+cos(12 pi rho)) cos(2 pi rho), (2+cos(12 pi rho)) sin(2 pi rho)).
    """
    if n < 3:
        raise ValueError("need at least 3 vertices")
    rho = _clockwise_samples(n)
    r = base + amplitude * np.cos(2.0 * petals * np.pi * rho)
    theta = 2.0 * np.pi * rho
    pts = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    return CurveState(positions=pts)


def generate_curve(shape: str, n: int, **params) -> CurveState:
    """Dispatch on shape name ("circle", "ellipse", "flower")."""
    builders = {
        "circle": generate_circle,
        "ellipse": generate_ellipse,
        "flower": generate_flower,
    }
    try:
        builder = builders[shape]
    except KeyError:
        raise ValueError(f"unknown curve shape {shape!r}") from None
    return builder(n, **params)


def validate_orientation(state: CurveState) -> None:
    """Assert clockwise traversal (negative shoelace area)."""
    if signed_area(state) >= 0:
        raise ValueError("curve must be traversed clockwise (negative signed area)")


def save_curve_csv(state: CurveState, path) -> None:
    """Write vertices as an x,y CSV with 17 significant digits (lossless for float64)."""
    with open(path, "w", newline="") as fh:
        fh.write("x,y\n")
        for px, py in state.positions:
            fh.write(f"{px:.17g},{py:.17g}\n")


def load_curve_csv(path) -> CurveState:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["x", "y"]:
            raise ValueError(f"{path}: expected header 'x,y'")
        rows = [(float(r[0]), float(r[1])) for r in reader if r]
    return CurveState(positions=np.array(rows, dtype=float))

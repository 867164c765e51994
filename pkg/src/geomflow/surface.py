"""Closed triangle meshes and their discrete geometry.

A surface is a closed, consistently outward-oriented triangle mesh.  For a
triangle sigma_j = (q_0, q_1, q_2) the unit normal is

    n_j = (q_1 - q_0) x (q_2 - q_0) / | ... |

and outward orientation means the enclosed volume sum_j q_0 . (q_1 x q_2)/6
is positive.  The mass-lumped inner product uses the one-point-per-corner rule

    (u, v)^h = 1/3 sum_j |sigma_j| sum_{k=0,1,2} (u.v)(q_jk),

and first derivatives use the piecewise constant P1 surface gradient

    grad phi_k |_sigma = n x e_k / (2 |sigma|),

with e_k the edge opposite to corner k, oriented so the gradient of a linear
function is reproduced exactly.

Mesh quality indicators: r_h = max edge / min edge (global), r_a = max area /
min area.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import DegenerateTriangleError, MeshTopologyError

__all__ = [
    "SurfaceState",
    "TriangleGeometry",
    "triangle_geometry",
    "lumped_inner_3d",
    "stiffness_inner_3d",
    "surface_area",
    "enclosed_volume",
    "mesh_ratios",
    "vertex_masses_3d",
    "vertex_normal_weights_3d",
    "generate_icosphere",
    "generate_ellipsoid",
    "generate_dumbbell",
    "generate_cuboid",
    "generate_surface",
    "validate_orientation_3d",
    "save_off",
    "load_off",
]

#: Triangles smaller than this fraction of the mean area are degenerate.
DEGENERATE_AREA_REL = 1e-14


@dataclass
class SurfaceState:
    """Vertex positions and triangles of a closed oriented surface mesh.

    vertices : (K, 3) float array.
    triangles : (J, 3) int array of vertex indices, outward winding.
    mean_curvature : optional (K,) vertex field produced by the flow solvers.
    time : simulation time the state belongs to.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    mean_curvature: Optional[np.ndarray] = None
    time: float = 0.0

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError("vertices must have shape (K, 3)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError("triangles must have shape (J, 3)")
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("vertices must be finite")
        k = self.vertices.shape[0]
        if k < 4:
            raise ValueError("a closed surface needs at least 4 vertices")
        if self.triangles.min(initial=0) < 0 or self.triangles.max(initial=-1) >= k:
            raise ValueError("triangle indices out of range")
        _validate_closed_oriented(self.triangles, k)
        if self.mean_curvature is not None:
            self.mean_curvature = np.asarray(self.mean_curvature, dtype=float)
            if self.mean_curvature.shape != (k,):
                raise ValueError("mean_curvature must have shape (K,)")

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]


def _validate_closed_oriented(triangles: np.ndarray, n_vertices: int) -> None:
    """Every directed edge must occur exactly once, its reverse exactly once."""
    tri = triangles
    directed = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    if directed.shape[0] == 0:
        raise MeshTopologyError("mesh has no triangles")
    keys = directed[:, 0].astype(np.int64) * n_vertices + directed[:, 1]
    unique, counts = np.unique(keys, return_counts=True)
    if np.any(counts != 1):
        raise MeshTopologyError("a directed edge occurs twice; inconsistent winding")
    reverse = directed[:, 1].astype(np.int64) * n_vertices + directed[:, 0]
    if not np.array_equal(unique, np.unique(reverse)):
        raise MeshTopologyError("mesh is not closed (unmatched edge)")


@dataclass
class TriangleGeometry:
    """Per-triangle areas, unit normals and P1 shape-function gradients."""

    areas: np.ndarray    # (J,)
    normals: np.ndarray  # (J, 3)
    grads: np.ndarray    # (J, 3, 3): [triangle, corner, component]
    total_area: float = field(init=False)

    def __post_init__(self):
        self.total_area = float(self.areas.sum())


def triangle_geometry(state: SurfaceState) -> TriangleGeometry:
    """Areas, normals and P1 gradients; raises on numerically degenerate triangles."""
    q = state.vertices[state.triangles]  # (J, 3, 3)
    cross = np.cross(q[:, 1] - q[:, 0], q[:, 2] - q[:, 0])
    doubled = np.linalg.norm(cross, axis=1)
    areas = 0.5 * doubled
    mean = float(areas.mean())
    if areas.min() <= DEGENERATE_AREA_REL * mean:
        j = int(np.argmin(areas))
        raise DegenerateTriangleError(
            f"triangle {j} has area {areas[j]:.3e} (mean {mean:.3e})"
        )
    normals = cross / doubled[:, None]
    # grad phi_k = n x (opposite edge) / (2 area); opposite edge of corner k
    # runs from corner k+1 to corner k+2 (cyclic).
    edges = np.stack([q[:, 2] - q[:, 1], q[:, 0] - q[:, 2], q[:, 1] - q[:, 0]], axis=1)
    grads = np.cross(normals[:, None, :], edges) / doubled[:, None, None]
    return TriangleGeometry(areas=areas, normals=normals, grads=grads)


def _corner_values(state: SurfaceState, values: np.ndarray, onesided: bool) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if onesided:
        expected = (state.n_triangles, 3)
        if values.shape[:2] != expected or values.ndim not in (2, 3):
            raise ValueError("one-sided fields must have shape (J, 3) or (J, 3, d)")
        return values
    if values.ndim not in (1, 2) or values.shape[0] != state.n_vertices:
        raise ValueError("vertex fields must have shape (K,) or (K, d)")
    return values[state.triangles]


def lumped_inner_3d(state: SurfaceState, u, v, *, u_onesided: bool = False,
                    v_onesided: bool = False) -> float:
    """Mass-lumped product (u, v)^h = 1/3 sum_j |sigma_j| sum_k (u.v)(q_jk)."""
    geom = triangle_geometry(state)
    uc = _corner_values(state, u, u_onesided)
    vc = _corner_values(state, v, v_onesided)
    if uc.ndim != vc.ndim:
        raise ValueError("cannot pair a scalar field with a vector field")
    prod = uc * vc if uc.ndim == 2 else np.einsum("jkd,jkd->jk", uc, vc)
    return float(np.sum(geom.areas * prod.sum(axis=1)) / 3.0)


def stiffness_inner_3d(state: SurfaceState, u, v) -> float:
    """First-derivative product sum_j |sigma_j| grad u|_j . grad v|_j."""
    geom = triangle_geometry(state)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    uc = u[state.triangles]
    vc = v[state.triangles]
    if u.ndim == 1:
        gu = np.einsum("jk,jkd->jd", uc, geom.grads)
        gv = np.einsum("jk,jkd->jd", vc, geom.grads)
        prod = np.einsum("jd,jd->j", gu, gv)
    else:
        gu = np.einsum("jkc,jkd->jcd", uc, geom.grads)
        gv = np.einsum("jkc,jkd->jcd", vc, geom.grads)
        prod = np.einsum("jcd,jcd->j", gu, gv)
    return float(np.sum(geom.areas * prod))


def surface_area(state: SurfaceState) -> float:
    return triangle_geometry(state).total_area


def enclosed_volume(state: SurfaceState) -> float:
    """Signed volume sum_j q_0.(q_1 x q_2)/6; positive for outward orientation."""
    q = state.vertices[state.triangles]
    return float(np.einsum("jd,jd->", q[:, 0], np.cross(q[:, 1], q[:, 2])) / 6.0)


def mesh_ratios(state: SurfaceState) -> Tuple[float, float]:
    """(r_h, r_a): global max/min edge length and max/min triangle area."""
    geom = triangle_geometry(state)
    q = state.vertices[state.triangles]
    edges = np.concatenate([q[:, 1] - q[:, 0], q[:, 2] - q[:, 1], q[:, 0] - q[:, 2]])
    lengths = np.linalg.norm(edges, axis=1)
    return (float(lengths.max() / lengths.min()),
            float(geom.areas.max() / geom.areas.min()))


def vertex_masses_3d(state: SurfaceState, geom: Optional[TriangleGeometry] = None
                     ) -> np.ndarray:
    """Lumped vertex masses: one third of the incident triangle areas."""
    geom = geom or triangle_geometry(state)
    masses = np.zeros(state.n_vertices)
    np.add.at(masses, state.triangles.ravel(), np.repeat(geom.areas / 3.0, 3))
    return masses


def vertex_normal_weights_3d(state: SurfaceState, geom: Optional[TriangleGeometry] = None
                             ) -> np.ndarray:
    """Lumped normal weights: one third of the incident area-weighted normals."""
    geom = geom or triangle_geometry(state)
    weights = np.zeros((state.n_vertices, 3))
    contrib = np.repeat(geom.areas[:, None] * geom.normals / 3.0, 3, axis=0)
    np.add.at(weights, state.triangles.ravel(), contrib)
    return weights


def validate_orientation_3d(state: SurfaceState) -> None:
    if enclosed_volume(state) <= 0:
        raise ValueError("surface must be oriented outward (positive enclosed volume)")


# ---------------------------------------------------------------------------
# Generators

_ICO_T = (1.0 + np.sqrt(5.0)) / 2.0

_ICO_VERTS = np.array([
    (-1, _ICO_T, 0), (1, _ICO_T, 0), (-1, -_ICO_T, 0), (1, -_ICO_T, 0),
    (0, -1, _ICO_T), (0, 1, _ICO_T), (0, -1, -_ICO_T), (0, 1, -_ICO_T),
    (_ICO_T, 0, -1), (_ICO_T, 0, 1), (-_ICO_T, 0, -1), (-_ICO_T, 0, 1),
], dtype=float)

_ICO_FACES = np.array([
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
], dtype=np.int64)


def _orient_outward(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    q = vertices[triangles]
    volume = np.einsum("jd,jd->", q[:, 0], np.cross(q[:, 1], q[:, 2])) / 6.0
    if volume < 0:
        return triangles[:, [0, 2, 1]]
    return triangles


def generate_icosphere(radius: float = 1.0, subdivisions: int = 0) -> SurfaceState:
    """Subdivided icosahedron projected to the sphere: K = 2 + 10*4^s, J = 20*4^s."""
    if subdivisions < 0:
        raise ValueError("subdivisions must be >= 0")
    verts = [v / np.linalg.norm(v) for v in _ICO_VERTS]
    faces = [tuple(f) for f in _ICO_FACES]
    for _ in range(subdivisions):
        cache: Dict[Tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                mid = verts[a] + verts[b]
                verts.append(mid / np.linalg.norm(mid))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    vertices = radius * np.array(verts)
    triangles = _orient_outward(vertices, np.array(faces, dtype=np.int64))
    return SurfaceState(vertices=vertices, triangles=triangles)


def generate_ellipsoid(a: float = 2.0, b: float = 1.0, c: float = 1.0,
                       subdivisions: int = 3) -> SurfaceState:
    """Icosphere image under diag(a, b, c): x^2/a^2 + y^2/b^2 + z^2/c^2 = 1."""
    sphere = generate_icosphere(1.0, subdivisions)
    vertices = sphere.vertices * np.array([a, b, c])
    return SurfaceState(vertices=vertices, triangles=sphere.triangles)


_DUMBBELL_PRESETS = {
    # (bulge, waist, n_theta, n_phi); profile f(phi) = bulge*cos^2(phi) + waist
    "fat": (0.6, 0.4, 53, 35),
    "thin": (0.7, 0.3, 42, 40),
}


def generate_dumbbell(kind: str = "fat", n_theta: Optional[int] = None,
                      n_phi: Optional[int] = None) -> SurfaceState:
    """Rotationally symmetric dumbbell on a latitude-longitude grid.

    X(theta, phi) = (cos phi, f(phi) cos theta sin phi, f(phi) sin theta sin phi)
    with f = 0.6 cos^2 phi + 0.4 ("fat") or 0.7 cos^2 phi + 0.3 ("thin").
    (K, J) = ((n_phi-1)*n_theta + 2, 2*n_theta*(n_phi-1)); the default grids
    give (1804, 3604) and (1640, 3276).
    """
    if kind not in _DUMBBELL_PRESETS:
        raise ValueError(f"unknown dumbbell kind {kind!r}")
    bulge, waist, nt_default, np_default = _DUMBBELL_PRESETS[kind]
    n_theta = n_theta or nt_default
    n_phi = n_phi or np_default
    if n_theta < 3 or n_phi < 2:
        raise ValueError("need n_theta >= 3 and n_phi >= 2")

    verts = [np.array([1.0, 0.0, 0.0])]
    for i in range(1, n_phi):
        phi = np.pi * i / n_phi
        f = bulge * np.cos(phi) ** 2 + waist
        theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
        ring = np.column_stack([
            np.full(n_theta, np.cos(phi)),
            f * np.cos(theta) * np.sin(phi),
            f * np.sin(theta) * np.sin(phi),
        ])
        verts.extend(ring)
    verts.append(np.array([-1.0, 0.0, 0.0]))
    vertices = np.array(verts)

    def ring_index(i: int, j: int) -> int:
        return 1 + (i - 1) * n_theta + j % n_theta

    faces = []
    for j in range(n_theta):
        faces.append((0, ring_index(1, j), ring_index(1, j + 1)))
    for i in range(1, n_phi - 1):
        for j in range(n_theta):
            a, b = ring_index(i, j), ring_index(i, j + 1)
            c, d = ring_index(i + 1, j), ring_index(i + 1, j + 1)
            faces.append((a, c, d))
            faces.append((a, d, b))
    south = len(vertices) - 1
    for j in range(n_theta):
        faces.append((south, ring_index(n_phi - 1, j + 1), ring_index(n_phi - 1, j)))
    triangles = _orient_outward(vertices, np.array(faces, dtype=np.int64))
    return SurfaceState(vertices=vertices, triangles=triangles)


def generate_cuboid(dims: Tuple[float, float, float] = (8.0, 1.0, 1.0),
                    divisions: Tuple[int, int, int] = (51, 6, 6)) -> SurfaceState:
    """Box surface centered at the origin, structured per-face grids.

    Each face is a regular quad grid split into triangles; boundary vertices
    are shared between faces.  divisions=(51, 6, 6) on an 8x1x1 box gives
    (K, J) = (1298, 2592) with nearly cubic cells.
    """
    lx, ly, lz = dims
    nx, ny, nz = divisions
    if min(nx, ny, nz) < 1:
        raise ValueError("divisions must be >= 1")
    coords = [np.linspace(-lx / 2, lx / 2, nx + 1),
              np.linspace(-ly / 2, ly / 2, ny + 1),
              np.linspace(-lz / 2, lz / 2, nz + 1)]
    sizes = (nx, ny, nz)
    index: Dict[Tuple[int, int, int], int] = {}
    verts = []

    def vertex(i: int, j: int, k: int) -> int:
        key = (i, j, k)
        if key not in index:
            verts.append((coords[0][i], coords[1][j], coords[2][k]))
            index[key] = len(verts) - 1
        return index[key]

    faces = []
    # For the face with axis `ax` fixed at its maximum, (u, v) run over the
    # remaining axes in right-handed order so the winding points outward;
    # the opposite face swaps the diagonal orientation.
    for ax in range(3):
        u_ax, v_ax = (ax + 1) % 3, (ax + 2) % 3
        for side, fixed in ((1, sizes[ax]), (0, 0)):
            for ju in range(sizes[u_ax]):
                for jv in range(sizes[v_ax]):
                    idx = {}
                    for du in (0, 1):
                        for dv in (0, 1):
                            ijk = [0, 0, 0]
                            ijk[ax] = fixed
                            ijk[u_ax] = ju + du
                            ijk[v_ax] = jv + dv
                            idx[du, dv] = vertex(*ijk)
                    a, b = idx[0, 0], idx[1, 0]
                    c, d = idx[1, 1], idx[0, 1]
                    if side == 1:
                        faces += [(a, b, c), (a, c, d)]
                    else:
                        faces += [(a, c, b), (a, d, c)]
    vertices = np.array(verts, dtype=float)
    triangles = _orient_outward(vertices, np.array(faces, dtype=np.int64))
    return SurfaceState(vertices=vertices, triangles=triangles)


def generate_surface(shape: str, **params) -> SurfaceState:
    """Dispatch on shape name ("icosphere", "ellipsoid", "dumbbell", "cuboid")."""
    builders = {
        "icosphere": generate_icosphere,
        "ellipsoid": generate_ellipsoid,
        "dumbbell": generate_dumbbell,
        "cuboid": generate_cuboid,
    }
    try:
        builder = builders[shape]
    except KeyError:
        raise ValueError(f"unknown surface shape {shape!r}") from None
    return builder(**params)


# ---------------------------------------------------------------------------
# OFF I/O


def save_off(state: SurfaceState, path) -> None:
    """Write the mesh in OFF format with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        fh.write("OFF\n")
        fh.write(f"{state.n_vertices} {state.n_triangles} 0\n")
        for x, y, z in state.vertices:
            fh.write(f"{x:.17g} {y:.17g} {z:.17g}\n")
        for a, b, c in state.triangles:
            fh.write(f"3 {a} {b} {c}\n")


def load_off(path) -> SurfaceState:
    with open(path) as fh:
        tokens = []
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.extend(line.split())
    if not tokens or tokens[0] != "OFF":
        raise ValueError(f"{path}: not an OFF file")
    nv, nf = int(tokens[1]), int(tokens[2])
    pos = 4
    vertices = np.array(tokens[pos:pos + 3 * nv], dtype=float).reshape(nv, 3)
    pos += 3 * nv
    faces = []
    for _ in range(nf):
        count = int(tokens[pos])
        if count != 3:
            raise ValueError(f"{path}: only triangle faces are supported")
        faces.append([int(t) for t in tokens[pos + 1:pos + 4]])
        pos += 4
    return SurfaceState(vertices=vertices, triangles=np.array(faces, dtype=np.int64))

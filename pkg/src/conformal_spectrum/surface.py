"""Triangle meshes of the round sphere and the flat torus.

Two closed surfaces are supported, each carrying its background metric in
closed form so that geodesic distances never depend on the triangulation:

* ``RoundSphere(radius)``: vertices embedded in R^3 on the sphere, built by
  icosahedral subdivision.
* ``FlatTorus(width, height)``: vertices in the fundamental domain
  ``[0, width) x [0, height)``, with periodic identification.  Edge vectors
  are always taken as minimum images, so submeshes may store unwrapped
  coordinates and still be handled by the same code.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .exceptions import CapacityError, DegenerateMeshError

MAX_SPHERE_LEVEL = 8


@dataclass(frozen=True)
class RoundSphere:
    radius: float = 1.0

    @property
    def area(self) -> float:
        return 4.0 * np.pi * self.radius**2

    @property
    def euler_characteristic(self) -> int:
        return 2

    @property
    def max_ball_radius(self) -> float:
        return np.pi * self.radius


@dataclass(frozen=True)
class FlatTorus:
    width: float = 1.0
    height: float = 1.0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def euler_characteristic(self) -> int:
        return 0

    @property
    def max_ball_radius(self) -> float:
        return 0.5 * min(self.width, self.height)

    @property
    def period(self) -> np.ndarray:
        return np.array([self.width, self.height])


SurfaceKind = Union[RoundSphere, FlatTorus]


@dataclass
class TriangleMesh:
    """Triangulated surface with its background metric.

    Parameters
    ----------
    vertices : ndarray of shape (n_vertices, 3) or (n_vertices, 2)
        Embedded points (sphere) or fundamental-domain coordinates (torus).
    triangles : ndarray of shape (n_triangles, 3)
        Vertex indices, consistently oriented.
    kind : RoundSphere or FlatTorus
        Surface carrying the closed-form metric.
    boundary_vertices : ndarray of int
        Local indices of boundary vertices; empty for closed meshes.
    parent_index : ndarray of int or None
        For submeshes, the parent-mesh index of each local vertex.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    kind: SurfaceKind
    boundary_vertices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    parent_index: Optional[np.ndarray] = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.intp)
        self.boundary_vertices = np.asarray(self.boundary_vertices, dtype=np.intp)
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise DegenerateMeshError("triangles must have shape (n_triangles, 3)")
        self._areas = None

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def is_closed(self) -> bool:
        return self.boundary_vertices.size == 0

    @property
    def interior_vertices(self) -> np.ndarray:
        mask = np.ones(self.n_vertices, dtype=bool)
        mask[self.boundary_vertices] = False
        return np.flatnonzero(mask)

    def corners(self) -> np.ndarray:
        """Triangle corner coordinates, shape (n_triangles, 3, dim).

        For the torus the second and third corners are unwrapped to the
        minimum image relative to the first.
        """
        p = self.vertices[self.triangles]
        if isinstance(self.kind, FlatTorus):
            period = self.kind.period
            d = p[:, 1:, :] - p[:, :1, :]
            d -= period * np.round(d / period)
            p = np.concatenate([p[:, :1, :], p[:, :1, :] + d], axis=1)
        return p

    @property
    def triangle_areas(self) -> np.ndarray:
        if self._areas is None:
            self._areas = np.abs(signed_areas(self))
        return self._areas

    @property
    def total_area(self) -> float:
        return float(self.triangle_areas.sum())

    def vertex_weights(self) -> np.ndarray:
        """Lumped vertex areas: one third of the adjacent triangle areas."""
        w = np.zeros(self.n_vertices)
        np.add.at(w, self.triangles.ravel(), np.repeat(self.triangle_areas / 3.0, 3))
        return w

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs, shape (n_edges, 2)."""
        e = self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges()) + self.n_triangles

    def valence(self) -> np.ndarray:
        e = self.edges()
        return np.bincount(e.ravel(), minlength=self.n_vertices)

    def mean_edge_length(self) -> float:
        c = self.corners()
        lengths = np.linalg.norm(c[:, [1, 2, 0]] - c, axis=2)
        return float(lengths.mean())

    def neighbors(self) -> list:
        """1-ring adjacency lists."""
        e = self.edges()
        order = np.argsort(np.concatenate([e[:, 0], e[:, 1]]), kind="stable")
        src = np.concatenate([e[:, 0], e[:, 1]])[order]
        dst = np.concatenate([e[:, 1], e[:, 0]])[order]
        splits = np.searchsorted(src, np.arange(1, self.n_vertices))
        return np.split(dst, splits)

    def distances_from(self, center: int) -> np.ndarray:
        """Closed-form geodesic distance from vertex ``center`` to every vertex."""
        return geodesic_distance(self.kind, self.vertices, self.vertices[center])


def signed_areas(mesh: TriangleMesh) -> np.ndarray:
    c = mesh.corners()
    e1 = c[:, 1] - c[:, 0]
    e2 = c[:, 2] - c[:, 0]
    if c.shape[2] == 2:
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    n = np.cross(e1, e2)
    # outward orientation on the sphere: normal agrees with the centroid direction
    sign = np.sign(np.einsum("ij,ij->i", n, c.mean(axis=1)))
    return 0.5 * sign * np.linalg.norm(n, axis=1)


def geodesic_distance(kind: SurfaceKind, points: np.ndarray, center: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(points)
    if isinstance(kind, RoundSphere):
        r = kind.radius
        cross = np.linalg.norm(np.cross(points, center), axis=1)
        dot = points @ center
        return r * np.arctan2(cross, dot)
    d = points - center
    d -= kind.period * np.round(d / kind.period)
    return np.linalg.norm(d, axis=1)


def _icosahedron():
    t = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


def build_sphere_mesh(subdivision_level: int, radius: float = 1.0) -> TriangleMesh:
    """Icosphere with ``10 * 4**level + 2`` vertices.

    Each level splits every triangle into four through edge midpoints, which
    are then projected radially onto the sphere.  ``subdivision_level`` is
    capped at ``MAX_SPHERE_LEVEL``.
    """
    level = int(subdivision_level)
    if level < 0:
        raise ValueError("subdivision_level must be nonnegative")
    if level > MAX_SPHERE_LEVEL:
        raise CapacityError(f"subdivision_level {level} exceeds cap {MAX_SPHERE_LEVEL}")
    v, f = _icosahedron()
    for _ in range(level):
        e = f[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        e_sorted = np.sort(e, axis=1)
        uniq, inv = np.unique(e_sorted, axis=0, return_inverse=True)
        mid = v[uniq].mean(axis=1)
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        m = (len(v) + inv.ravel()).reshape(-1, 3)  # midpoints of edges (01, 12, 20)
        a, b, c = f[:, 0], f[:, 1], f[:, 2]
        m01, m12, m20 = m[:, 0], m[:, 1], m[:, 2]
        f = np.concatenate(
            [
                np.stack([a, m01, m20], axis=1),
                np.stack([b, m12, m01], axis=1),
                np.stack([c, m20, m12], axis=1),
                np.stack([m01, m12, m20], axis=1),
            ]
        )
        v = np.vstack([v, mid])
    return TriangleMesh(radius * v, f, RoundSphere(radius))


def build_torus_mesh(nx: int, ny: int, width: float = 1.0, height: float = 1.0) -> TriangleMesh:
    """Regular ``nx x ny`` grid on the flat torus, each cell cut along its (1, 1) diagonal."""
    if nx < 3 or ny < 3:
        raise DegenerateMeshError("torus grid needs nx, ny >= 3")
    if width <= 0 or height <= 0:
        raise ValueError("torus dimensions must be positive")
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    verts = np.column_stack([i.ravel() * width / nx, j.ravel() * height / ny])

    def idx(a, b):
        return (a % nx) * ny + (b % ny)

    i, j = i.ravel(), j.ravel()
    v00, v10, v11, v01 = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
    tris = np.concatenate([np.stack([v00, v10, v11], 1), np.stack([v00, v11, v01], 1)])
    return TriangleMesh(verts, tris, FlatTorus(float(width), float(height)))


def geodesic_ball(mesh: TriangleMesh, center: int, radius: float, snap: bool = True) -> TriangleMesh:
    """Submesh of triangles lying entirely inside the geodesic ball ``B(center, radius)``.

    Distances come from the closed-form metric of ``mesh.kind``.  The returned
    mesh records ``parent_index`` (local -> parent vertex) and its topological
    boundary.  With ``snap=True`` boundary vertices are moved along geodesics
    onto the circle of radius ``radius``, which removes the first-order domain
    error of the inscribed polygon; a boundary vertex is left in place if
    moving it would flip a triangle.  Torus submeshes store coordinates
    unwrapped around the center.
    """
    kind = mesh.kind
    if not radius > 0:
        raise ValueError("radius must be positive")
    if radius >= kind.max_ball_radius:
        raise ValueError(
            f"radius {radius} violates injectivity bound {kind.max_ball_radius} for {kind}"
        )
    dist = mesh.distances_from(center)
    inside = dist <= radius
    tri_mask = inside[mesh.triangles].all(axis=1)
    if not tri_mask.any():
        raise DegenerateMeshError("geodesic ball contains no triangle")
    tris = mesh.triangles[tri_mask]
    parent = np.unique(tris)
    local = np.full(mesh.n_vertices, -1, dtype=np.intp)
    local[parent] = np.arange(parent.size)
    tris = local[tris]

    e = tris[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    e.sort(axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    boundary = np.unique(uniq[counts == 1])
    if boundary.size >= parent.size:
        raise DegenerateMeshError("geodesic ball has no interior vertex")

    c = mesh.vertices[center]
    pts = mesh.vertices[parent].copy()
    if isinstance(kind, FlatTorus):
        d = pts - c
        d -= kind.period * np.round(d / kind.period)
        pts = c + d
    sub = TriangleMesh(pts, tris, kind, boundary_vertices=boundary, parent_index=parent)
    if snap:
        _snap_boundary(sub, c, radius)
    if np.any(signed_areas(sub) <= 0):
        raise DegenerateMeshError("geodesic ball extraction produced inverted triangles")
    return sub


def _snap_boundary(sub: TriangleMesh, center: np.ndarray, radius: float) -> None:
    kind = sub.kind
    b = sub.boundary_vertices
    original = sub.vertices[b].copy()
    p = original
    if isinstance(kind, RoundSphere):
        r = kind.radius
        c_hat = center / np.linalg.norm(center)
        tangent = p - np.outer(p @ c_hat, c_hat)
        norms = np.linalg.norm(tangent, axis=1, keepdims=True)
        ok = norms[:, 0] > 1e-14
        tangent[ok] /= norms[ok]
        ang = radius / r
        moved = r * (np.cos(ang) * c_hat + np.sin(ang) * tangent)
    else:
        d = p - center
        norms = np.linalg.norm(d, axis=1, keepdims=True)
        ok = norms[:, 0] > 1e-14
        moved = p.copy()
        moved[ok] = center + d[ok] * (radius / norms[ok])
    sub.vertices[b[ok]] = moved[ok]
    # undo moves that invert triangles, one vertex at a time
    for _ in range(len(b) + 1):
        bad = signed_areas(sub) <= 0
        if not bad.any():
            break
        bad_verts = np.intersect1d(sub.triangles[bad].ravel(), b)
        pos = np.searchsorted(b, bad_verts)
        sub.vertices[bad_verts] = original[pos]
    sub._areas = None


def write_off(mesh: TriangleMesh, path) -> None:
    """Write the mesh in ASCII OFF format (2D vertices get a zero z-coordinate)."""
    v = mesh.vertices
    if v.shape[1] == 2:
        v = np.column_stack([v, np.zeros(len(v))])
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_triangles} {len(mesh.edges())}\n")
        np.savetxt(fh, v, fmt="%.17g")
        np.savetxt(fh, np.column_stack([np.full(mesh.n_triangles, 3), mesh.triangles]), fmt="%d")


def read_off(path) -> tuple:
    """Read vertices and faces back from an ASCII OFF file."""
    with open(path) as fh:
        lines = [ln for ln in (s.strip() for s in fh) if ln and not ln.startswith("#")]
    if lines[0] != "OFF":
        raise ValueError("not an OFF file")
    nv, nf = (int(t) for t in lines[1].split()[:2])
    verts = np.array([[float(t) for t in ln.split()] for ln in lines[2 : 2 + nv]])
    faces = np.array([[int(t) for t in ln.split()[1:4]] for ln in lines[2 + nv : 2 + nv + nf]])
    return verts, faces

"""Stiffness and lumped mass forms of the weighted eigenproblem.

The Dirichlet energy of a surface is conformally invariant, so the stiffness
matrix depends on the background mesh only.  The conformal density enters
through the diagonal mass ``M = diag(mu * w)`` where ``w`` are the lumped
vertex areas.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.sparse as sp

from .exceptions import AssemblyError, DegenerateMeshError
from .surface import TriangleMesh

ZERO_AREA = 1e-300


def cotangent_weights(mesh: TriangleMesh) -> tuple:
    """Per-triangle half-cotangents opposite each corner.

    Returns ``(corner_cot, triangles)`` where ``corner_cot[t, i]`` is
    ``cot(angle at corner i) / 2`` of triangle ``t``; the edge opposite corner
    ``i`` joins corners ``i+1`` and ``i+2``.
    """
    c = mesh.corners()
    areas = mesh.triangle_areas
    bad = np.flatnonzero(areas <= ZERO_AREA)
    if bad.size:
        raise AssemblyError(f"degenerate triangle {int(bad[0])} (zero area)")
    cot = np.empty((mesh.n_triangles, 3))
    for i in range(3):
        a = c[:, (i + 1) % 3] - c[:, i]
        b = c[:, (i + 2) % 3] - c[:, i]
        # cot = (a.b) / |a x b| and |a x b| = 2 * area
        cot[:, i] = np.einsum("ij,ij->i", a, b) / (2.0 * areas)
    return 0.5 * cot, mesh.triangles


def assemble_stiffness(mesh: TriangleMesh) -> sp.csr_matrix:
    """Cotangent stiffness matrix ``A`` with ``u^T A u = sum_T int_T |grad u|^2``.

    Takes no density argument: the form is the same for every metric in the
    conformal class.  Entries are accumulated in a fixed order, so the result
    is bit-reproducible.
    """
    half_cot, tris = cotangent_weights(mesh)
    n = mesh.n_vertices
    rows, cols, vals = [], [], []
    for i in range(3):
        a = tris[:, (i + 1) % 3]
        b = tris[:, (i + 2) % 3]
        wgt = half_cot[:, i]
        rows += [a, b, a, b]
        cols += [b, a, a, b]
        vals += [-wgt, -wgt, wgt, wgt]
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def dirichlet_energy_by_triangles(mesh: TriangleMesh, u: np.ndarray) -> float:
    """Independent evaluation of ``int |grad u|^2`` from per-triangle gradients.

    The gradient of the linear interpolant on each triangle is constant; this
    route never forms cotangents or a matrix.
    """
    c = mesh.corners()
    uu = np.asarray(u, dtype=float)[mesh.triangles]
    e1 = c[:, 1] - c[:, 0]
    e2 = c[:, 2] - c[:, 0]
    # metric tensor of the triangle in the (e1, e2) frame
    g11 = np.einsum("ij,ij->i", e1, e1)
    g12 = np.einsum("ij,ij->i", e1, e2)
    g22 = np.einsum("ij,ij->i", e2, e2)
    det = g11 * g22 - g12**2
    d1 = uu[:, 1] - uu[:, 0]
    d2 = uu[:, 2] - uu[:, 0]
    grad_sq = (g22 * d1**2 - 2 * g12 * d1 * d2 + g11 * d2**2) / det
    return float(np.sum(grad_sq * 0.5 * np.sqrt(det)))


@dataclass
class DensityField:
    """Per-vertex conformal density inside the box ``[lower_bound, cap]``.

    ``mass`` is the lumped integral ``sum_v values[v] * weights[v]``.
    """

    values: np.ndarray
    weights: np.ndarray
    lower_bound: float = 0.0
    cap: float = np.inf

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.values.shape != self.weights.shape:
            raise ValueError("density and vertex weights differ in size")

    @property
    def mass(self) -> float:
        return float(self.values @ self.weights)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.values != 0)

    def is_feasible(self, tol: float = 1e-10) -> bool:
        v = self.values
        return bool(
            np.all(v >= self.lower_bound - tol)
            and np.all(v <= self.cap + tol)
            and abs(self.mass - 1.0) <= tol
        )

    @classmethod
    def uniform(cls, mesh: TriangleMesh, lower_bound: float = 0.0, cap: float = np.inf):
        w = mesh.vertex_weights()
        return cls(np.full(mesh.n_vertices, 1.0 / w.sum()), w, lower_bound, cap)

    def copy(self) -> "DensityField":
        return DensityField(self.values.copy(), self.weights.copy(), self.lower_bound, self.cap)


def assemble_mass(mesh: TriangleMesh, density) -> sp.dia_matrix:
    """Lumped mass ``diag(mu_v * w_v)``.

    ``density`` is a :class:`DensityField` or an array of per-vertex values.
    """
    values = density.values if isinstance(density, DensityField) else np.asarray(density, float)
    if values.shape != (mesh.n_vertices,):
        raise ValueError(
            f"density has shape {values.shape}, mesh has {mesh.n_vertices} vertices"
        )
    return sp.diags(values * mesh.vertex_weights(), format="csr")


@dataclass
class DirichletRestriction:
    """Interior-vertex system of a submesh with homogeneous Dirichlet data."""

    interior: np.ndarray
    n_full: int
    stiffness: sp.csr_matrix = field(repr=False)
    mass: sp.csr_matrix = field(repr=False)

    def prolong(self, x: np.ndarray) -> np.ndarray:
        """Extend interior values by zero on the boundary."""
        x = np.asarray(x)
        out = np.zeros((self.n_full,) + x.shape[1:], dtype=x.dtype)
        out[self.interior] = x
        return out


def restrict_to_submesh(stiffness, mass, submesh: TriangleMesh) -> DirichletRestriction:
    """Eliminate boundary rows and columns of ``stiffness`` and ``mass``.

    Both forms must be assembled on ``submesh``.  A closed submesh yields the
    identity restriction.
    """
    interior = submesh.interior_vertices
    if interior.size == 0:
        raise DegenerateMeshError("submesh has no interior vertices")
    A = sp.csr_matrix(stiffness)[interior][:, interior]
    M = sp.csr_matrix(mass)[interior][:, interior]
    return DirichletRestriction(interior, submesh.n_vertices, A.tocsr(), M.tocsr())


def restrict_density(density, submesh: TriangleMesh) -> np.ndarray:
    """Pull parent-mesh vertex values onto a submesh through ``parent_index``."""
    values = density.values if isinstance(density, DensityField) else np.asarray(density, float)
    if submesh.parent_index is None:
        return values.copy()
    return values[submesh.parent_index]


def write_matrix_market(matrix, path, comment: str = "") -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(matrix), comment=comment, symmetry="general")

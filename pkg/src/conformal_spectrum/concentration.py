"""Atoms, regular part and singular spectra of optimized densities.

A terminal density is split into atoms (mass that stays inside shrinking
geodesic balls) and a regular remainder.  On the sphere the measure is first
brought into a Moebius-balanced position in which the regular part is not
identically zero: a maximizing sequence of the sphere is only determined up
to conformal automorphisms, and without this step a symmetric pair of
half-mass bubbles is indistinguishable from two atoms.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .assembly import DensityField, restrict_density
from .eigensolver import solve_dirichlet
from .exceptions import DegenerateMeshError
from .surface import RoundSphere, TriangleMesh, geodesic_ball

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.05


@dataclass
class Atom:
    vertex: int
    weight: float
    radius: float
    ball_masses: list = field(default_factory=list)
    extrapolated_weight: float = float("nan")

    def as_dict(self) -> dict:
        return {
            "vertex": int(self.vertex),
            "weight": float(self.weight),
            "radius": float(self.radius),
            "ball_masses": [float(m) for m in self.ball_masses],
            "extrapolated_weight": float(self.extrapolated_weight),
        }


@dataclass
class MeasureDecomposition:
    """Atoms plus regular part of a discrete measure.

    ``regular_density`` is the input density with the atom balls zeroed,
    not renormalized, so ``sum(weights) + regular_mass == 1``.
    """

    atoms: list
    regular_density: np.ndarray = field(repr=False)
    regular_mass: float
    k: Optional[int] = None
    warnings: list = field(default_factory=list)
    normalization: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(self.atoms)

    @property
    def weights(self) -> np.ndarray:
        return np.array([a.weight for a in self.atoms])

    @property
    def bound_satisfied(self) -> Optional[bool]:
        """``K <= k - 1``; a violation is a finding, not an error."""
        return None if self.k is None else self.K <= self.k - 1

    def as_dict(self) -> dict:
        return {
            "K": self.K,
            "k": self.k,
            "atoms": [a.as_dict() for a in self.atoms],
            "regular_mass": float(self.regular_mass),
            "bound_K_le_k_minus_1": self.bound_satisfied,
            "warnings": list(self.warnings),
            "normalization": self.normalization,
        }


def _ball_mass(dist, masses, r):
    return float(masses[dist <= r].sum())


def _local_maxima(mesh: TriangleMesh, values: np.ndarray) -> np.ndarray:
    nbrs = mesh.neighbors()
    is_max = np.array([values[v] >= values[n].max() if len(n) else True for v, n in enumerate(nbrs)])
    cand = np.flatnonzero(is_max & (values > 0))
    return cand[np.argsort(-values[cand], kind="stable")]


def _cap_area(kind, r):
    if isinstance(kind, RoundSphere):
        R = kind.radius
        return 2.0 * np.pi * R**2 * (1.0 - np.cos(min(r / R, np.pi)))
    return np.pi * r**2


def detect_atoms(
    mesh: TriangleMesh,
    density,
    k: Optional[int] = None,
    stages: Optional[Sequence] = None,
    r0: Optional[float] = None,
    radius: Optional[float] = None,
    threshold: float = DEFAULT_THRESHOLD,
    monotone_slack: float = 0.02,
    halo_factor: float = 2.0,
) -> MeasureDecomposition:
    """Detect point-mass concentrations of a density.

    With ``stages``, a sequence of ``(cap, values)`` pairs from a continuation
    (the last one matching ``density``), a local maximum ``x`` of the final
    density is an atom when the mass of stage ``s`` inside ``B(x, r0 /
    sqrt(cap_s))`` reaches ``threshold`` at the last stage and does not
    decrease (up to ``monotone_slack``) as the cap grows and the ball shrinks.

    Without stages a single-scale test is used: the mass in ``B(x, radius)``
    must exceed the local background, estimated from the annulus
    ``radius < d <= 2 radius``, by at least ``threshold`` and by at least
    half of the ball mass.

    An accepted ball then grows ring by ring (one mean edge length at a
    time, up to ``r0``) while the density in the next ring exceeds
    ``halo_factor`` times the median density, so the atom's weight includes
    its unresolved tail.  Overlapping candidate balls are merged into the
    stronger candidate and reported in ``warnings``.
    """
    values = density.values if isinstance(density, DensityField) else np.asarray(density, float)
    w = mesh.vertex_weights()
    masses = values * w
    h = mesh.mean_edge_length()
    if r0 is None:
        r0 = 10.0 * h
    multi = stages is not None and len(stages) >= 2
    if multi:
        caps = np.array([float(c) for c, _ in stages])
        stage_masses = [np.asarray(v, float) * w for _, v in stages]
        radii = r0 / np.sqrt(caps)
        r_final = float(radii[-1])
    else:
        r_final = float(radius if radius is not None else 3.0 * h)

    reference = float(np.median(values[values > 0])) if np.any(values > 0) else 0.0
    atoms, notes = [], []
    for x in _local_maxima(mesh, values):
        if masses[x] <= 0:
            continue
        dist = mesh.distances_from(x)
        clash = [a for a in atoms if dist[a.vertex] < a.radius + r_final]
        if multi:
            ball = [_ball_mass(dist, m, r) for m, r in zip(stage_masses, radii)]
            m_in = ball[-1]
            if m_in < threshold:
                continue
            if any(b < a - monotone_slack for a, b in zip(ball, ball[1:])):
                continue
            bg = _background(dist, masses, r_final, mesh.kind)
            if m_in - bg < 0.5 * m_in:
                continue
            extrap = _extrapolate_mass(caps, ball)
        else:
            m_in = _ball_mass(dist, masses, r_final)
            bg = _background(dist, masses, r_final, mesh.kind)
            excess = m_in - bg
            if excess < threshold or excess < 0.5 * m_in:
                continue
            ball, extrap = [m_in], m_in
        if clash:
            notes.append(
                f"candidate at vertex {int(x)} overlaps atom at vertex {clash[0].vertex}; merged"
            )
            continue
        r_atom = _grow_radius(dist, masses, w, r_final, h, halo_factor * reference, max(r0, r_final))
        atoms.append(Atom(int(x), _ball_mass(dist, masses, r_atom), r_atom, ball, extrap))

    regular = values.copy()
    for a in atoms:
        regular[mesh.distances_from(a.vertex) <= a.radius] = 0.0
    total = float(masses.sum())
    regular_mass = total - sum(a.weight for a in atoms)
    for msg in notes:
        logger.warning(msg)
    return MeasureDecomposition(atoms, regular, regular_mass, k, notes)


def _grow_radius(dist, masses, w, r, step, level, r_max) -> float:
    while r + step <= r_max:
        ring = (dist > r) & (dist <= r + step)
        if ring.any() and masses[ring].sum() <= level * w[ring].sum():
            break
        r += step
    return r


def _background(dist, masses, r, kind) -> float:
    """Expected mass in ``B(r)`` from the mean density of the annulus ``r < d <= 2r``."""
    ring = (dist > r) & (dist <= 2 * r)
    ring_area = _cap_area(kind, 2 * r) - _cap_area(kind, r)
    if ring_area <= 0 or not ring.any():
        return 0.0
    return float(masses[ring].sum()) / ring_area * _cap_area(kind, r)


def _extrapolate_mass(caps, ball) -> float:
    """Linear extrapolation of the ball mass in ``1/cap`` to ``1/cap -> 0``."""
    if len(ball) < 2:
        return float(ball[-1])
    x0, x1 = 1.0 / caps[-2], 1.0 / caps[-1]
    y0, y1 = ball[-2], ball[-1]
    val = y1 - (y1 - y0) / (x1 - x0) * x1
    return float(np.clip(val, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Moebius balancing on the sphere


def _bubble_profile_fit(dist, masses):
    """Fit ``M s^2 / (1 + s^2)``, ``s = tan(r/2) / eps``, to the cumulative mass around a point.

    This is the mass profile of a round sphere of mass ``M`` dilated by
    ``1/eps`` around the point.  Returns ``(M, eps)``.
    """
    order = np.argsort(dist)
    r_sorted, cum = dist[order], np.cumsum(masses[order])
    grid = np.linspace(0.02, np.pi / 2, 80)
    F = np.interp(grid, r_sorted, cum)
    t = np.tan(grid / 2)
    best = (np.inf, 1.0, 1.0)
    for eps in np.geomspace(1e-3, 3.0, 600):
        s2 = (t / eps) ** 2
        f = s2 / (1 + s2)
        M = float(f @ F) / float(f @ f)
        res = float(np.sum((M * f - F) ** 2))
        if res < best[0]:
            best = (res, M, eps)
    return best[1], best[2]


def dilate_sphere(points: np.ndarray, center: np.ndarray, eps: float) -> np.ndarray:
    """Conformal dilation of the unit sphere fixing ``center`` and its antipode.

    In stereographic coordinates sending ``-center`` to infinity it is
    ``z -> z / eps``: the neighbourhood of ``center`` is expanded for
    ``eps < 1`` and the neighbourhood of ``-center`` compressed.
    """
    c = center / np.linalg.norm(center)
    p = points / np.linalg.norm(points, axis=1, keepdims=True)
    cosr = np.clip(p @ c, -1.0, 1.0)
    r = np.arccos(cosr)
    tang = p - np.outer(cosr, c)
    nt = np.linalg.norm(tang, axis=1, keepdims=True)
    ok = nt[:, 0] > 1e-15
    tang[ok] /= nt[ok]
    r_new = 2.0 * np.arctan(np.tan(r / 2.0) / eps)
    out = np.outer(np.cos(r_new), c) + np.sin(r_new)[:, None] * tang
    out[~ok] = p[~ok]
    return out


def _locate_on_sphere(mesh: TriangleMesh, points: np.ndarray, tree, incident):
    """Containing triangle and barycentric weights of points on a sphere mesh."""
    _, near = tree.query(points, k=3)
    cand = incident[near].reshape(len(points), -1)
    valid = cand >= 0
    cand_safe = np.where(valid, cand, 0)
    T = mesh.vertices[mesh.triangles[cand_safe]]  # (N, C, 3 corners, 3)
    b = np.linalg.solve(np.swapaxes(T, -1, -2), np.broadcast_to(points[:, None, :], T.shape[:2] + (3,))[..., None])[..., 0]
    total = b.sum(axis=-1, keepdims=True)
    b = np.where(total > 0, b / np.where(total > 0, total, 1.0), -np.inf)
    score = np.where(valid, b.min(axis=-1), -np.inf)
    pick = np.argmax(score, axis=1)
    rows = np.arange(len(points))
    tri = cand_safe[rows, pick]
    bary = np.clip(b[rows, pick], 0.0, None)
    return tri, bary / bary.sum(axis=1, keepdims=True)


def _subtriangle_centroids(s: int) -> np.ndarray:
    """Barycentric centroids of the ``s*s`` triangles of a uniform subdivision."""
    out = []
    for i in range(s):
        for j in range(s - i):
            out.append([(i + 1 / 3), (j + 1 / 3), (s - i - j - 2 / 3)])
            if i + j < s - 1:
                out.append([(i + 2 / 3), (j + 2 / 3), (s - i - j - 4 / 3)])
    return np.array(out) / s


def push_forward(mesh: TriangleMesh, values: np.ndarray, mapping, subdivisions) -> np.ndarray:
    """Push the lumped measure of ``values`` through ``mapping`` onto the same sphere mesh.

    Each triangle ``T`` is split into ``subdivisions[T]**2`` equal pieces; the
    piecewise linear density is integrated exactly on them with centroid
    quadrature, the centroids are mapped and their mass deposited on the
    vertices of the containing triangle with barycentric weights.  Total mass
    is conserved exactly.  Returns deposited vertex masses.
    """
    R = mesh.kind.radius
    unit = mesh.vertices / R
    tree = cKDTree(unit)
    val = np.bincount(mesh.triangles.ravel(), minlength=mesh.n_vertices)
    incident = np.full((mesh.n_vertices, val.max()), -1, dtype=np.intp)
    fill = np.zeros(mesh.n_vertices, dtype=np.intp)
    for t, tri in enumerate(mesh.triangles):
        for v in tri:
            incident[v, fill[v]] = t
            fill[v] += 1
    areas = mesh.triangle_areas
    out = np.zeros(mesh.n_vertices)
    subdivisions = np.asarray(subdivisions, dtype=int)
    for s in np.unique(subdivisions):
        tris = np.flatnonzero(subdivisions == s)
        beta = _subtriangle_centroids(int(s))  # (S, 3)
        corners = unit[mesh.triangles[tris]]  # (n, 3, 3)
        pts = np.einsum("sc,ncd->nsd", beta, corners).reshape(-1, 3)
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        dens = np.einsum("sc,nc->ns", beta, values[mesh.triangles[tris]]).ravel()
        mass = dens * np.repeat(areas[tris] / len(beta), len(beta))
        keep = mass != 0
        if not keep.any():
            continue
        img = mapping(pts[keep])
        tri, bary = _locate_on_sphere(mesh, img, tree, incident)
        np.add.at(out, mesh.triangles[tri].ravel(), (bary * mass[keep][:, None]).ravel())
    return out


def mobius_normalize(
    mesh: TriangleMesh,
    density,
    min_dilation: float = 0.8,
    max_subdivisions: int = 16,
    center: Optional[int] = None,
):
    """Move a sphere density into the position where its densest bubble is round.

    Fits the dilated-round-sphere profile around the density maximum and, if
    the fitted scale ``eps`` is below ``min_dilation``, pushes the measure
    forward by the inverse dilation.  Mass is conserved exactly.  ``center``
    fixes the vertex the fit is made around (default: the maximum).  Returns
    ``(values, info)``; non-sphere meshes are returned unchanged.
    """
    values = density.values if isinstance(density, DensityField) else np.asarray(density, float)
    info = {"applied": False}
    if not isinstance(mesh.kind, RoundSphere):
        return values.copy(), info
    w = mesh.vertex_weights()
    masses = values * w
    c = int(np.argmax(values)) if center is None else int(center)
    dist = mesh.distances_from(c) / mesh.kind.radius
    M, eps = _bubble_profile_fit(dist, masses)
    info.update(center=c, bubble_mass=float(M), eps=float(eps))
    if eps >= min_dilation:
        return values.copy(), info
    center = mesh.vertices[c] / mesh.kind.radius
    centroids = mesh.corners().mean(axis=1)
    r = np.arccos(np.clip(centroids @ center / np.linalg.norm(centroids, axis=1), -1, 1))
    # local stretch factor of the dilation decides the quadrature resolution
    t = np.tan(r / 2)
    stretch = (1 + t**2) / eps / (1 + (t / eps) ** 2)
    subdiv = np.clip(np.ceil(2 * stretch), 1, max_subdivisions).astype(int)
    new_masses = push_forward(mesh, values, lambda p: dilate_sphere(p, center, eps), subdiv)
    info["applied"] = True
    return new_masses / w, info


def mobius_normalize_stages(mesh: TriangleMesh, stages, center: Optional[int] = None):
    """Apply :func:`mobius_normalize` to each ``(cap, values)`` pair about one common center."""
    out, infos = [], []
    for cap, v in stages:
        nv, info = mobius_normalize(mesh, v, center=center)
        out.append((cap, nv))
        infos.append(info)
    return out, infos


# ---------------------------------------------------------------------------
# Weight quantization


@dataclass
class QuantizationCheck:
    lambda_k: float
    atom_candidates: list
    regular_candidates: list
    atom_nearest: list
    atom_distances: list
    regular_nearest: float
    regular_distance: float
    tol: float
    sphere_table: dict
    class_table: dict

    @property
    def atoms_pass(self) -> bool:
        return all(d <= self.tol for d in self.atom_distances)

    @property
    def regular_pass(self) -> bool:
        return self.regular_distance <= self.tol

    @property
    def passed(self) -> bool:
        return self.atoms_pass and self.regular_pass

    def as_dict(self) -> dict:
        return {
            "lambda_k": self.lambda_k,
            "atom_candidates": self.atom_candidates,
            "regular_candidates": self.regular_candidates,
            "atom_nearest": self.atom_nearest,
            "atom_distances": self.atom_distances,
            "regular_nearest": self.regular_nearest,
            "regular_distance": self.regular_distance,
            "tol": self.tol,
            "atoms_pass": self.atoms_pass,
            "regular_pass": self.regular_pass,
            "passed": self.passed,
            "sphere_table": {str(j): v for j, v in self.sphere_table.items()},
            "class_table": {str(j): v for j, v in self.class_table.items()},
        }


def default_sphere_table(k: int) -> dict:
    """Reference values ``Lambda_j(S^2) = 8 pi j`` (configurable)."""
    return {j: 8.0 * np.pi * j for j in range(1, k + 1)}


def _nearest(x, candidates):
    cand = np.asarray(candidates, float)
    scale = np.where(cand != 0, np.abs(cand), 1.0)
    d = np.abs(x - cand) / scale
    i = int(np.argmin(d))
    return float(cand[i]), float(d[i])


def check_quantization(
    decomposition: MeasureDecomposition,
    lambda_k_estimate: float,
    sphere_table: dict,
    class_table: dict,
    k: Optional[int] = None,
    tol: float = 0.15,
) -> QuantizationCheck:
    """Distances of atom weights and regular mass to the admissible ratio sets.

    Atom weights are compared with ``sphere_table[j] / lambda_k`` for
    ``j = 1..k`` and the regular mass with ``class_table[j] / lambda_k`` for
    ``j = 0..k`` (``class_table[0]`` defaults to 0).  Distances are relative
    to the candidate (absolute for a zero candidate).
    """
    if not lambda_k_estimate > 0:
        raise ValueError("lambda_k_estimate must be positive")
    if not sphere_table or not class_table:
        raise ValueError("reference tables must be nonempty")
    if k is None:
        k = decomposition.k if decomposition.k is not None else max(sphere_table)
    atom_c = [sphere_table[j] / lambda_k_estimate for j in range(1, k + 1) if j in sphere_table]
    ct = dict(class_table)
    ct.setdefault(0, 0.0)
    reg_c = [ct[j] / lambda_k_estimate for j in range(0, k + 1) if j in ct]
    nearest, dists = [], []
    for c in decomposition.weights:
        n, d = _nearest(c, atom_c)
        nearest.append(n)
        dists.append(d)
    rn, rd = _nearest(decomposition.regular_mass, reg_c)
    return QuantizationCheck(
        float(lambda_k_estimate),
        [float(x) for x in atom_c],
        [float(x) for x in reg_c],
        nearest,
        dists,
        rn,
        rd,
        tol,
        {int(j): float(v) for j, v in sphere_table.items()},
        {int(j): float(v) for j, v in ct.items()},
    )


# ---------------------------------------------------------------------------
# Singular spectrum


@dataclass
class SingularSpectrum:
    """Dirichlet eigenvalues on shrinking balls around one atom.

    ``table[s][i]`` holds the eigenvalues on the ball of radius ``radii[i]``
    for stage ``s``.
    """

    vertex: int
    radii: list
    caps: list
    table: list
    limits: np.ndarray
    error_bars: np.ndarray
    monotone: bool
    finite_limit: bool
    warnings: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "vertex": int(self.vertex),
            "radii": [float(r) for r in self.radii],
            "caps": [float(c) for c in self.caps],
            "table": [[[float(x) for x in row] for row in st] for st in self.table],
            "limits": [float(x) for x in self.limits],
            "error_bars": [float(x) for x in self.error_bars],
            "monotone": self.monotone,
            "finite_limit": self.finite_limit,
            "warnings": list(self.warnings),
        }


def singular_spectrum(
    mesh: TriangleMesh,
    vertex: int,
    radii: Sequence[float],
    stages: Sequence,
    count: int = 3,
    tol: float = 1e-10,
) -> SingularSpectrum:
    """Density-weighted Dirichlet eigenvalues on ``B(vertex, eps)`` for decreasing ``eps``.

    ``stages`` is a sequence of ``(cap, values)`` pairs; each radius is solved
    for every stage with the stage density restricted to the ball.  Limits
    use linear extrapolation in ``eps^2`` through the two finest radii of the
    last stage; the error bar is the spread of those two values.
    ``finite_limit`` is False when the first eigenvalue grows like
    ``eps^-2`` (no mass concentrated at the center).
    """
    radii = [float(r) for r in radii]
    if len(radii) < 3:
        raise ValueError("at least three radii are needed")
    if any(b >= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be strictly decreasing")
    notes, kept, balls = [], [], []
    for r in radii:
        try:
            balls.append(geodesic_ball(mesh, vertex, r))
            kept.append(r)
        except DegenerateMeshError as exc:
            notes.append(f"radius {r:g} dropped: {exc}")
    if len(kept) < 2:
        raise DegenerateMeshError("fewer than two usable radii")
    table = []
    for _, values in stages:
        rows = []
        for ball in balls:
            local = restrict_density(values, ball)
            interior = ball.interior_vertices
            n_sup = int(np.count_nonzero(local[interior]))
            c = min(count, n_sup)
            if c == 0:
                rows.append([np.inf] * count)
                continue
            res = solve_dirichlet(ball, local, c, tol=tol, allow_indefinite=bool(np.any(local < 0)))
            lam = list(res.eigenvalues) + [np.inf] * (count - c)
            rows.append(lam)
        table.append(rows)
    last = np.array(table[-1])
    monotone = True
    for st in table:
        arr = np.array(st)
        if np.any(np.diff(arr, axis=0) < -1e-8 * np.abs(arr[:-1]).clip(1.0)):
            monotone = False
    e1, e2 = kept[-2], kept[-1]
    l1, l2 = last[-2], last[-1]
    with np.errstate(invalid="ignore"):
        limits = (l2 * e1**2 - l1 * e2**2) / (e1**2 - e2**2)
        err = np.abs(l2 - l1)
    with np.errstate(invalid="ignore", over="ignore"):
        finite = bool(last[-1, 0] * kept[-1] ** 2 < 0.5 * last[0, 0] * kept[0] ** 2)
    if not monotone:
        notes.append("domain monotonicity violated in at least one column")
    return SingularSpectrum(
        vertex, kept, [float(c) for c, _ in stages], [[list(r) for r in st] for st in table],
        limits, err, monotone, finite, notes,
    )


def membership_report(
    lambda_k_estimate: float,
    spectra: Sequence[SingularSpectrum],
    regular_eigenvalues,
    tol: float = 0.1,
) -> dict:
    """Distances from ``lambda_k`` to the singular and regular spectra."""
    lam = float(lambda_k_estimate)
    per_atom = []
    for sp_ in spectra:
        vals = np.concatenate([np.ravel(sp_.limits), np.ravel(sp_.table[-1][-1])])
        vals = vals[np.isfinite(vals) & (vals > 0)]
        if vals.size == 0:
            per_atom.append({"vertex": sp_.vertex, "distance": None, "passed": False})
            continue
        d = np.abs(vals - lam) / lam
        i = int(np.argmin(d))
        per_atom.append(
            {
                "vertex": int(sp_.vertex),
                "nearest": float(vals[i]),
                "distance": float(d[i]),
                "passed": bool(d[i] <= tol),
                "finite_limit": sp_.finite_limit,
            }
        )
    reg = np.asarray(regular_eigenvalues, float)
    reg = reg[reg > 1e-8 * max(1.0, lam)]
    if reg.size:
        d = np.abs(reg - lam) / lam
        i = int(np.argmin(d))
        regular = {"nearest": float(reg[i]), "distance": float(d[i]), "passed": bool(d[i] <= tol)}
    else:
        regular = {"nearest": None, "distance": None, "passed": False}
    return {
        "lambda_k": lam,
        "tol": tol,
        "singular": per_atom,
        "singular_vacuous": len(spectra) == 0,
        "singular_passed": all(a["passed"] for a in per_atom),
        "regular": regular,
    }

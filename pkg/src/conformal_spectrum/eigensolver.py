"""Smallest eigenpairs of ``A u = lambda M u`` with a diagonal, possibly singular, mass.

The pencil is transformed with a shift ``sigma < 0`` into

    M x = theta K x,    K = A - sigma M,    theta = 1 / (lambda - sigma),

where ``K`` is positive definite whenever ``A`` is semidefinite with kernel
the constants and the constants carry positive mass.  The smallest
``lambda`` are the largest ``theta``; vertices with zero mass only produce
``theta = 0`` and never pollute the low spectrum.  On those vertices the
computed eigenvectors satisfy ``(A u)_v = 0``, i.e. they are the harmonic
extension of the values on the support.  The same route handles an
indefinite mass (the ``-1/2`` lower bound mode) as long as ``K`` stays
positive definite.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import assemble_mass, assemble_stiffness, restrict_to_submesh
from .exceptions import ConfigurationError, ConvergenceError
from .surface import TriangleMesh

DENSE_LIMIT = 600
CLUSTER_TOL = 1e-3
SLICE_GUARD = 2
STAGNATION = 10


@dataclass
class SpectralResult:
    """Ascending eigenvalues with mass-orthonormal eigenvectors.

    Attributes
    ----------
    eigenvalues : ndarray of shape (count,)
    eigenvectors : ndarray of shape (n_vertices, count)
        Columns satisfy ``U^T M U = I``.
    residuals : ndarray of shape (count,)
        ``||A u - lambda M u|| / ||u||``.
    multiplicity_groups : list of ndarray
        Index sets of eigenvalues with relative gaps below ``cluster_tol``.
    negative_eigenvalues : ndarray
        Eigenvalues in ``(sigma, 0)``, only possible with an indefinite mass.
        They are excluded from the indexing, which starts at the zero mode;
        eigenvalues below ``sigma`` are not computed.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)
    residuals: np.ndarray
    multiplicity_groups: list
    tol: float = 1e-10
    negative_eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mass_diagonal: np.ndarray = field(default=None, repr=False)
    relative_residuals: np.ndarray = field(default=None, repr=False)

    def group_of(self, index: int) -> np.ndarray:
        for g in self.multiplicity_groups:
            if index in g:
                return g
        raise IndexError(f"index {index} outside the computed spectrum")

    def write_csv(self, path) -> None:
        """Eigenpair dump: one row per vertex, one column per eigenvector."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["vertex"] + [f"u{j}" for j in range(len(self.eigenvalues))])
            w.writerow(["eigenvalue"] + [repr(float(x)) for x in self.eigenvalues])
            for v, row in enumerate(self.eigenvectors):
                w.writerow([v] + [repr(float(x)) for x in row])


def multiplicity_groups(eigenvalues, cluster_tol: float = CLUSTER_TOL) -> list:
    """Partition ascending eigenvalues into runs with relative gap below ``cluster_tol``."""
    lam = np.asarray(eigenvalues)
    if lam.size == 0:
        return []
    groups, start = [], 0
    for j in range(1, lam.size):
        scale = max(abs(lam[j]), abs(lam[j - 1]))
        if scale == 0 or (lam[j] - lam[j - 1]) > cluster_tol * scale:
            groups.append(np.arange(start, j))
            start = j
    groups.append(np.arange(start, lam.size))
    return groups


def _mass_diagonal(mass) -> np.ndarray:
    if sp.issparse(mass):
        return np.asarray(mass.diagonal(), dtype=float)
    m = np.asarray(mass, dtype=float)
    return np.diag(m).copy() if m.ndim == 2 else m


def _count_below(A, mdiag, tau):
    """Number of eigenvalues below ``tau`` from the inertia of ``A - tau M``.

    Uses a symmetric-permutation LU without row pivoting, which is an
    LDL^T factorization; returns None if SuperLU had to pivot anyway.
    """
    S = (sp.csc_matrix(A) - tau * sp.diags(mdiag)).tocsc()
    try:
        lu = spla.splu(S, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
    except RuntimeError:
        return None
    if not np.array_equal(lu.perm_r, lu.perm_c):
        return None
    return int(np.count_nonzero(lu.U.diagonal() < 0))


def _slice_point(lam, start, rel=1e-6):
    """Midpoint of the first gap above ``lam[start]`` and the number of values below it."""
    for j in range(start, len(lam) - 1):
        if lam[j + 1] - lam[j] > rel * max(abs(lam[j]), 1.0):
            return 0.5 * (lam[j] + lam[j + 1]), j + 1
    return None


def _block_refine(M, K, lu, X0, nwant, theta_floor, tol, seed, maxiter):
    """Subspace iteration with ``K^-1 M`` until ``nwant`` Ritz pairs above ``theta_floor`` converge."""
    n = X0.shape[0]
    # generous block so the convergence ratio is not set by a split cluster
    b = min(n, max(2 * nwant, nwant + 10, X0.shape[1]))
    rng = np.random.default_rng(seed + 1)
    Y = np.hstack([X0, rng.standard_normal((n, b - X0.shape[1]))])[:, :b]
    best, since = np.inf, 0
    for _ in range(maxiter):
        Q, _ = np.linalg.qr(lu.solve(M @ Y))
        th, V = scipy.linalg.eigh(Q.T @ (M @ Q), Q.T @ (K @ Q))
        th, V = th[::-1], V[:, ::-1]
        Y = Q @ V
        W = Y[:, :nwant]
        MW, KW = M @ W, K @ W
        rel = np.linalg.norm(MW - KW * th[:nwant], axis=0) / (
            np.linalg.norm(MW, axis=0) + th[:nwant] * np.linalg.norm(KW, axis=0)
        )
        if th[nwant - 1] > theta_floor:
            if rel.max() <= tol:
                return th, Y
            # a tolerance below the roundoff floor is met by stagnation
            if rel.max() < 0.5 * best:
                best, since = rel.max(), 0
            else:
                since += 1
                if since >= STAGNATION and best < 1e-8:
                    return th, Y
    raise ConvergenceError(f"block refinement did not recover {nwant} eigenpairs")


def _solve_pencil(A, mdiag, count, sigma, tol, seed, maxiter):
    n = A.shape[0]
    M = sp.diags(mdiag, format="csc")
    K = (sp.csc_matrix(A) - sigma * M).tocsc()
    if n <= DENSE_LIMIT:
        theta, X = scipy.linalg.eigh(M.toarray(), K.toarray())
        theta, X = theta[::-1][:count], X[:, ::-1][:, :count]
        return theta, X
    lu = spla.splu(K)
    Kinv = spla.LinearOperator((n, n), matvec=lu.solve, dtype=float)
    v0 = np.random.default_rng(seed).standard_normal(n)
    want = min(count + SLICE_GUARD, n - 1)
    ncv = min(n, max(2 * want + 1, want + 20))
    try:
        theta, X = spla.eigsh(
            M, k=want, M=K, Minv=Kinv, which="LA", v0=v0, tol=tol, ncv=ncv, maxiter=maxiter
        )
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError(
            f"eigensolver did not converge: {len(exc.eigenvalues)} of {count} pairs",
            residuals=None,
        ) from exc
    order = np.argsort(-theta)
    theta, X = theta[order], X[:, order]
    # single-vector Lanczos can drop copies of a degenerate eigenvalue;
    # compare with the exact count from the inertia of A - tau M
    if np.all(mdiag >= 0) and np.all(theta > 0):
        lam = sigma + 1.0 / theta
        cut = _slice_point(lam, count - 1)
        if cut is None:
            # computed values end inside a cluster; slice just above them
            cut = lam[-1] + 1e-6 * max(abs(lam[-1]), 1.0), len(lam)
        tau, found = cut
        exact = _count_below(A, mdiag, tau)
        if exact is not None and exact > found:
            theta, X = _block_refine(
                M, K, lu, X, exact, 1.0 / (tau - sigma), max(tol, 1e-12), seed, maxiter
            )
    return theta[:count], X[:, :count]


def solve_smallest(
    stiffness,
    mass,
    count: int,
    tol: float = 1e-10,
    seed: int = 0,
    sigma: float = -1.0,
    allow_indefinite: bool = False,
    cluster_tol: float = CLUSTER_TOL,
    maxiter: int = 5000,
) -> SpectralResult:
    """The ``count`` smallest eigenpairs of ``stiffness u = lambda mass u``.

    Parameters
    ----------
    stiffness : sparse matrix
        Symmetric positive semidefinite form.
    mass : sparse diagonal matrix or 1-D array
        Lumped mass.  Zero entries mark vertices outside the support.
    count : int
        Number of eigenpairs, at most the number of support vertices.
    tol : float in (0, 1e-2]
        ARPACK relative tolerance on the transformed problem.
    seed : int
        Seed of the fixed Krylov starting vector; equal seeds give equal results.
    sigma : float
        Spectral shift; must keep ``stiffness - sigma * mass`` positive definite.
        Negative for closed meshes, may be 0 for Dirichlet problems.
    allow_indefinite : bool
        Accept negative mass entries (experimental).
    """
    if not 0 < tol <= 1e-2:
        raise ConfigurationError("tol must lie in (0, 1e-2]")
    mdiag = _mass_diagonal(mass)
    if np.any(mdiag < 0) and not allow_indefinite:
        raise ConfigurationError("mass has negative entries; enable allow_indefinite")
    n_support = int(np.count_nonzero(mdiag))
    if count < 1 or count > n_support:
        raise ConfigurationError(f"count={count} must lie in [1, {n_support}] (support size)")
    A = sp.csr_matrix(stiffness)

    extra = 0
    while True:
        want = min(count + extra, n_support)
        theta, X = _solve_pencil(A, mdiag, want, sigma, tol, seed, maxiter)
        pos = theta > 0
        lam_all = sigma + 1.0 / np.where(pos, theta, np.nan)
        floor = -1e-8 * max(1.0, float(np.nanmax(np.abs(lam_all))))
        is_neg = pos & (lam_all < floor)
        negative = lam_all[is_neg]
        keep = pos & ~is_neg
        if keep.sum() >= count or want == n_support:
            break
        extra = 2 * extra + int(count - keep.sum()) + 2
    idx = np.flatnonzero(keep)[:count]
    lam = lam_all[idx]
    X = X[:, idx]
    X = X / np.sqrt(np.einsum("ij,i,ij->j", X, mdiag, X))
    order = np.argsort(lam, kind="stable")
    lam, X = lam[order], X[:, order]
    # deterministic sign: largest-magnitude entry positive
    flip = X[np.abs(X).argmax(axis=0), np.arange(X.shape[1])] < 0
    X[:, flip] *= -1
    R = A @ X - (mdiag[:, None] * X) * lam
    residuals = np.linalg.norm(R, axis=0) / np.linalg.norm(X, axis=0)
    # normwise backward error (||A|| + |lambda| ||M||) ||u||, 1-norms
    a_norm = float(abs(A).sum(axis=0).max())
    scale = (a_norm + np.abs(lam) * np.abs(mdiag).max()) * np.linalg.norm(X, axis=0)
    relative = np.linalg.norm(R, axis=0) / np.where(scale > 0, scale, 1.0)
    return SpectralResult(
        eigenvalues=lam,
        eigenvectors=X,
        residuals=residuals,
        multiplicity_groups=multiplicity_groups(lam, cluster_tol),
        tol=tol,
        negative_eigenvalues=np.sort(negative),
        mass_diagonal=mdiag,
        relative_residuals=relative,
    )


def solve_dirichlet(
    submesh: TriangleMesh,
    density,
    count: int,
    tol: float = 1e-10,
    seed: int = 0,
    allow_indefinite: bool = False,
    cluster_tol: float = CLUSTER_TOL,
) -> SpectralResult:
    """Dirichlet eigenpairs on a submesh (``u = 0`` on its boundary vertices).

    ``density`` holds per-vertex values in submesh-local numbering.  The
    stiffness restricted to interior vertices is definite, so no shift is
    needed and there is no zero mode.  Eigenvectors are returned on the full
    submesh, zero on the boundary.
    """
    A = assemble_stiffness(submesh)
    M = assemble_mass(submesh, density)
    sys = restrict_to_submesh(A, M, submesh)
    res = solve_smallest(
        sys.stiffness,
        sys.mass,
        count,
        tol=tol,
        seed=seed,
        sigma=0.0,
        allow_indefinite=allow_indefinite,
        cluster_tol=cluster_tol,
    )
    res.eigenvectors = sys.prolong(res.eigenvectors)
    md = np.zeros(submesh.n_vertices)
    md[sys.interior] = res.mass_diagonal
    res.mass_diagonal = md
    return res


def rayleigh_quotient(stiffness, mass, u) -> float:
    """``(u^T A u) / (u^T M u)``."""
    u = np.asarray(u, dtype=float)
    mdiag = _mass_diagonal(mass)
    denom = float(u @ (mdiag * u))
    if denom == 0.0:
        raise ZeroDivisionError("vector has zero mass norm")
    return float(u @ (stiffness @ u)) / denom

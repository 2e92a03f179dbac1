"""Closed-form reference spectra and the sphere-valued eigenmap certificate."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import jv

from .eigensolver import SpectralResult


def sphere_spectrum(l_max: int, radius: float = 1.0) -> list:
    """Eigenvalues ``l (l + 1) / r^2`` of the round sphere for ``l <= l_max``.

    Each entry is ``(l, eigenvalue, multiplicity, normalized)`` where
    ``normalized`` is the eigenvalue for the unit-mass uniform density,
    i.e. multiplied by the area ``4 pi r^2``.
    """
    if l_max < 0:
        raise ValueError("l_max must be nonnegative")
    out = []
    for l in range(l_max + 1):
        lam = l * (l + 1) / radius**2
        out.append((l, float(lam), 2 * l + 1, float(lam * 4 * np.pi * radius**2)))
    return out


def expand_multiplicities(spectrum) -> np.ndarray:
    """Flatten ``sphere_spectrum`` output into an ascending list with repeats."""
    return np.concatenate([np.full(m, lam) for _, lam, m, _ in spectrum])


def torus_spectrum(width: float, height: float, count: int) -> tuple:
    """The ``count`` smallest eigenvalues ``4 pi^2 (p^2/width^2 + q^2/height^2)``.

    Returns ``(values, groups)`` with ``values`` ascending (repeated by
    multiplicity) and ``groups`` a list of ``(value, multiplicity)``.
    """
    if width <= 0 or height <= 0:
        raise ValueError("torus dimensions must be positive")
    n = int(np.ceil(np.sqrt(count))) + 2
    while True:
        p, q = np.meshgrid(np.arange(-n, n + 1), np.arange(-n, n + 1))
        vals = np.sort((4 * np.pi**2 * (p**2 / width**2 + q**2 / height**2)).ravel())
        bound = 4 * np.pi**2 * (n + 1) ** 2 / max(width, height) ** 2
        if vals[count - 1] < bound:
            break
        n *= 2
    vals = vals[:count]
    uniq, groups = [], []
    for v in vals:
        if uniq and np.isclose(v, uniq[-1], rtol=1e-12, atol=1e-12):
            groups[-1][1] += 1
        else:
            uniq.append(v)
            groups.append([float(v), 1])
    return vals, [tuple(g) for g in groups]


def bessel_zeros(order: int, count: int, tol: float = 1e-12) -> np.ndarray:
    """First ``count`` positive zeros of ``J_order`` by bracketing and Brent's method."""
    zeros = []
    step = 0.1
    a = 1e-6 if order == 0 else float(order)
    fa = jv(order, a)
    while len(zeros) < count:
        b = a + step
        fb = jv(order, b)
        if fa == 0.0:
            zeros.append(a)
        elif fa * fb < 0:
            zeros.append(brentq(lambda x: jv(order, x), a, b, xtol=tol, rtol=4 * np.finfo(float).eps))
        a, fa = b, fb
    return np.array(zeros[:count])


def disk_dirichlet_spectrum(radius: float, count: int) -> np.ndarray:
    """Smallest ``count`` Dirichlet eigenvalues ``(j_{m,s} / radius)^2`` of a flat disk.

    Modes with ``m >= 1`` appear twice (cosine and sine).
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    vals = []
    m = 0
    while True:
        z = bessel_zeros(m, count)
        if len(vals) >= count and z[0] ** 2 > np.sort(vals)[count - 1]:
            break
        for j in z:
            vals.extend([j**2] * (1 if m == 0 else 2))
        m += 1
    return np.sort(vals)[:count] / radius**2


@dataclass
class HarmonicMapCertificate:
    """Combination of eigenvectors approximating a map into a round sphere.

    ``maps[:, i]`` are the functions ``u_i = U c_i`` with ``sum_i u_i^2 ~ 1``
    on ``regular_support``.
    """

    ell: int
    coefficients: np.ndarray = field(repr=False)
    gram: np.ndarray = field(repr=False)
    maps: np.ndarray = field(repr=False)
    sphere_defect: float
    dirichlet_energy: float
    eigenvalue: float
    tol: float
    iterations: int

    @property
    def valid(self) -> bool:
        return self.sphere_defect < self.tol

    def as_dict(self) -> dict:
        return {
            "ell": int(self.ell),
            "sphere_defect": float(self.sphere_defect),
            "dirichlet_energy": float(self.dirichlet_energy),
            "eigenvalue": float(self.eigenvalue),
            "tol": float(self.tol),
            "valid": bool(self.valid),
            "iterations": int(self.iterations),
            "gram": self.gram.tolist(),
        }


def _psd_project(Q):
    ev, V = np.linalg.eigh(0.5 * (Q + Q.T))
    return (V * np.clip(ev, 0.0, None)) @ V.T


def harmonic_map_certificate(
    result: SpectralResult,
    group,
    regular_support,
    tol: float = 1e-2,
    stiffness=None,
    weights=None,
    max_iter: int = 1000,
    rank_tol: float = 1e-6,
) -> HarmonicMapCertificate:
    """Fit ``sum_i u_i(x)^2 = 1`` with eigenvectors from one multiplicity group.

    Finds a positive semidefinite ``Q`` minimizing
    ``sum_x w_x (u(x)^T Q u(x) - 1)^2`` over ``regular_support`` by
    accelerated projected gradient on the PSD cone, then factors
    ``Q = C^T C`` so that the rows of ``C`` give the component functions.
    ``ell`` is the numerical rank of ``Q``.  The Dirichlet energy is
    ``sum_i u_i^T A u_i`` when ``stiffness`` is given, otherwise
    ``lambda * trace(Q)`` from the eigen-equation.
    """
    group = np.asarray(group, dtype=int)
    support = np.asarray(regular_support)
    if support.dtype == bool:
        support = np.flatnonzero(support)
    if group.size == 0 or support.size == 0:
        raise ValueError("group and regular_support must be nonempty")
    U = result.eigenvectors[:, group]
    Us = U[support]
    wx = np.ones(len(support)) if weights is None else np.asarray(weights, float)[support]
    wx = wx / wx.sum()
    m = U.shape[1]
    Z = np.einsum("vi,vj->vij", Us, Us).reshape(len(Us), m * m)
    H = (Z.T * wx) @ Z
    b = Z.T @ wx
    # unconstrained least squares start (minimum norm, rotation equivariant)
    q0 = np.linalg.lstsq(H, b, rcond=None)[0]
    Q = _psd_project(q0.reshape(m, m))
    L = max(np.linalg.eigvalsh(H)[-1], 1e-300)
    Y, t_acc = Q, 1.0
    it = 0
    for it in range(1, max_iter + 1):
        grad = (H @ Y.ravel() - b).reshape(m, m)
        Q_new = _psd_project(Y - grad / L)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_acc**2))
        Y = Q_new + ((t_acc - 1.0) / t_new) * (Q_new - Q)
        done = np.max(np.abs(Q_new - Q)) <= 1e-15 * max(1.0, np.max(np.abs(Q)))
        Q, t_acc = Q_new, t_new
        if done:
            break
    Q = 0.5 * (Q + Q.T)
    ev, V = np.linalg.eigh(Q)
    keep = ev > rank_tol * max(ev.max(), 1e-300)
    C = (V[:, keep] * np.sqrt(ev[keep])).T  # (ell, m)
    maps = U @ C.T
    defect = float(np.max(np.abs(np.einsum("vi,ij,vj->v", Us, Q, Us) - 1.0)))
    lam = float(np.mean(result.eigenvalues[group]))
    if stiffness is not None:
        energy = float(np.einsum("vi,vi->", maps, stiffness @ maps))
    else:
        energy = lam * float(np.trace(Q))
    return HarmonicMapCertificate(
        ell=int(keep.sum()),
        coefficients=C,
        gram=Q,
        maps=maps,
        sphere_defect=defect,
        dirichlet_energy=energy,
        eigenvalue=lam,
        tol=tol,
        iterations=it,
    )

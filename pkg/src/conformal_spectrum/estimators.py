"""Estimator-style front ends: ``fit`` on a mesh, results in trailing-underscore attributes."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .assembly import DensityField, assemble_stiffness
from .concentration import detect_atoms, mobius_normalize, mobius_normalize_stages
from .density_opt import SpectralObjective, continuation
from .surface import RoundSphere
from .validation import (
    check_caps,
    check_density,
    check_index,
    check_mesh,
    check_positive,
    check_stages,
)


def jittered_start(mesh, amplitude: float, seed: int, lower_bound: float, cap: float) -> DensityField:
    """Uniform density times ``1 + amplitude * (linear function)``, renormalized.

    The linear function is a random direction dotted with the embedded
    coordinates (sphere) or a random low Fourier mode (torus).
    """
    rng = np.random.default_rng(seed)
    w = mesh.vertex_weights()
    x = mesh.vertices
    if isinstance(mesh.kind, RoundSphere):
        f = x @ rng.standard_normal(3) / mesh.kind.radius
    else:
        phase = rng.uniform(0, 2 * np.pi, 2)
        f = np.cos(2 * np.pi * x[:, 0] / mesh.kind.width + phase[0]) + np.cos(
            2 * np.pi * x[:, 1] / mesh.kind.height + phase[1]
        )
    f = f / np.max(np.abs(f))
    mu = 1.0 + amplitude * f
    return DensityField(mu / (w @ mu), w, lower_bound, cap)


class ConformalEigenvalueMaximizer(BaseEstimator):
    """Maximize the k-th eigenvalue over unit-mass densities by continuation in the cap.

    Parameters
    ----------
    k : int
        Eigenvalue index, counted from the zero mode.
    caps : sequence of float
        Strictly increasing density caps.
    lower_bound : float
        Pointwise lower bound on the density, 0 or -0.5.
    budget : int
        Ascent iterations per cap.
    window : float
        Relative width of the eigenvalue block ascended together.
    tol : float
        Eigensolver tolerance.
    start : {"uniform", "jitter"}
        Initial density.
    jitter : float
        Amplitude of the ``"jitter"`` start.
    random_state : int
        Seed for the start and for the eigensolver's starting vector.

    Attributes
    ----------
    density_ : DensityField
    trace_ : OptimizationTrace
    lambda_k_ : float
        Best eigenvalue found at the last cap.
    spectrum_ : SpectralResult
        Eigenpairs of the final density.
    stage_estimates_ : ndarray
    """

    def __init__(
        self,
        k=1,
        caps=(4.0, 8.0, 16.0, 32.0),
        lower_bound=0.0,
        budget=500,
        window=0.02,
        tol=1e-10,
        start="uniform",
        jitter=0.05,
        random_state=0,
    ):
        self.k = k
        self.caps = caps
        self.lower_bound = lower_bound
        self.budget = budget
        self.window = window
        self.tol = tol
        self.start = start
        self.jitter = jitter
        self.random_state = random_state

    def fit(self, X, y=None):
        """Run the continuation on mesh ``X``; ``y`` is an optional start density."""
        mesh = check_mesh(X)
        k = check_index(self.k)
        caps = check_caps(self.caps)
        if self.lower_bound not in (0.0, -0.5):
            raise ValueError("lower_bound must be 0 or -0.5")
        seed = int(self.random_state)
        w = mesh.vertex_weights()
        if y is not None:
            start = DensityField(check_density(y, mesh), w, self.lower_bound, caps[0])
        elif self.start == "uniform":
            start = DensityField.uniform(mesh, self.lower_bound, caps[0])
        elif self.start == "jitter":
            start = jittered_start(mesh, check_positive("jitter", self.jitter), seed, self.lower_bound, caps[0])
        else:
            raise ValueError(f"unknown start {self.start!r}")
        density, trace = continuation(
            k,
            caps,
            mesh,
            start=start,
            lower_bound=self.lower_bound,
            budget=int(self.budget),
            window=float(self.window),
            tol=float(self.tol),
            seed=seed,
        )
        objective = SpectralObjective(
            assemble_stiffness(mesh), k, tol=float(self.tol), seed=seed,
            allow_indefinite=self.lower_bound < 0,
        )
        self.mesh_ = mesh
        self.density_ = density
        self.trace_ = trace
        self.spectrum_ = objective(density)
        self.lambda_k_ = float(self.spectrum_.eigenvalues[k])
        self.stage_estimates_ = trace.stage_estimates
        self.n_features_in_ = mesh.n_vertices
        return self

    def score(self, X=None, y=None):
        """The optimized k-th eigenvalue (higher is better)."""
        check_is_fitted(self, "lambda_k_")
        return self.lambda_k_

    @property
    def stages_(self):
        check_is_fitted(self, "trace_")
        return [(s.cap, s.density) for s in self.trace_.stages if not s.failed]


class AtomDetector(BaseEstimator):
    """Split a density into atoms and a regular part.

    ``fit(mesh, density, stages=None)``.  On the round sphere, with
    ``normalize="auto"``, each density is first moved to its Moebius-balanced
    position (see :func:`conformal_spectrum.concentration.mobius_normalize`).

    Attributes
    ----------
    decomposition_ : MeasureDecomposition
    atoms_ : list of Atom
    regular_mass_ : float
    normalized_density_ : ndarray
    normalized_stages_ : list or None
    """

    def __init__(self, k=None, threshold=0.05, r0=None, radius=None, normalize="auto"):
        self.k = k
        self.threshold = threshold
        self.r0 = r0
        self.radius = radius
        self.normalize = normalize

    def fit(self, X, y, stages=None):
        mesh = check_mesh(X)
        values = check_density(y, mesh)
        stages = check_stages(stages, mesh)
        k = None if self.k is None else check_index(self.k)
        do_norm = self.normalize is True or (
            self.normalize == "auto" and isinstance(mesh.kind, RoundSphere)
        )
        info = {"applied": False}
        if do_norm:
            values, info = mobius_normalize(mesh, values)
            if stages is not None:
                # one center for every stage keeps the ball masses comparable
                stages, _ = mobius_normalize_stages(mesh, stages, center=info.get("center"))
                stages[-1] = (stages[-1][0], values)
        dec = detect_atoms(
            mesh,
            values,
            k=k,
            stages=stages,
            r0=self.r0,
            radius=self.radius,
            threshold=check_positive("threshold", self.threshold),
        )
        dec.normalization = info
        self.decomposition_ = dec
        self.atoms_ = dec.atoms
        self.regular_mass_ = dec.regular_mass
        self.normalized_density_ = values
        self.normalized_stages_ = stages
        self.n_features_in_ = mesh.n_vertices
        return self

    def transform(self, X=None):
        """Regular part of the fitted density (atom balls zeroed)."""
        check_is_fitted(self, "decomposition_")
        return self.decomposition_.regular_density

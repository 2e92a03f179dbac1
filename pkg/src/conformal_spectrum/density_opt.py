"""Projected ascent of the k-th eigenvalue over the box-constrained density class.

The feasible set for cap ``n`` is

    S_n = { mu : lower <= mu_v <= n,  sum_v w_v mu_v = 1 }

and the objective is ``lambda_k(mu)`` of ``A u = lambda diag(mu w) u``,
counted from the zero mode (``lambda_0 = 0``).  Continuation runs the ascent
for an increasing sequence of caps, warm-starting each stage from the
previous optimum.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .assembly import DensityField, assemble_stiffness
from .eigensolver import CLUSTER_TOL, SpectralResult, solve_smallest
from .exceptions import ConfigurationError, ConvergenceError, StaleEigenpairError
from .surface import TriangleMesh

logger = logging.getLogger(__name__)

CLAMP_TOL = 1e-9


@dataclass
class FeasibleSet:
    lower_bound: float
    cap: float
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        total = self.weights.sum()
        if not (self.lower_bound * total < 1.0 < self.cap * total):
            raise ConfigurationError(
                f"empty feasible set: need lower < 1/area={1.0 / total:.6g} < cap "
                f"(lower={self.lower_bound}, cap={self.cap})"
            )

    @property
    def total_area(self) -> float:
        return float(self.weights.sum())


def project_to_feasible(raw, fs: FeasibleSet) -> DensityField:
    """Weighted Euclidean projection onto ``S_n``.

    The minimizer of ``sum_v w_v (mu_v - raw_v)^2`` over the box with unit
    mass is ``clip(raw + t, lower, cap)`` for a scalar shift ``t``.  The
    shift is bracketed and bisected on the monotone mass function, then
    recomputed exactly from the identified free set.
    """
    raw = np.asarray(raw, dtype=float)
    w = fs.weights
    lo, hi = fs.lower_bound, fs.cap

    def mass(t):
        return float(w @ np.clip(raw + t, lo, hi))

    t_lo = lo - raw.max()
    if np.isfinite(hi):
        t_hi = hi - raw.min()
    else:
        t_hi = max(lo - raw.min(), (1.0 - w @ raw) / w.sum()) + 1.0
    for _ in range(200):
        t_mid = 0.5 * (t_lo + t_hi)
        if t_mid in (t_lo, t_hi):
            break
        if mass(t_mid) < 1.0:
            t_lo = t_mid
        else:
            t_hi = t_mid
    t = 0.5 * (t_lo + t_hi)
    shifted = raw + t
    free = (shifted > lo) & (shifted < hi)
    if free.any():
        clamped_mass = w[~free] @ np.clip(shifted[~free], lo, hi)
        t = (1.0 - clamped_mass - w[free] @ raw[free]) / w[free].sum()
    mu = np.clip(raw + t, lo, hi)
    return DensityField(mu, w.copy(), lo, hi)


def _check_fresh(result: SpectralResult, idx) -> None:
    rel = result.relative_residuals[idx]
    limit = max(1e3 * result.tol, 1e-6)
    if np.any(rel > limit):
        raise StaleEigenpairError(
            f"relative residual {rel.max():.3g} exceeds {limit:.3g}; recompute the eigenpairs"
        )


def eigenvalue_derivative(result: SpectralResult, k: int, direction, weights):
    """Directional derivative of ``lambda_k`` along a density perturbation.

    For a simple eigenvalue with ``u^T M u = 1`` this is
    ``-lambda_k * sum_v nu_v w_v u_v^2``.  When ``lambda_k`` belongs to a
    multiplicity group with basis ``U``, the one-sided derivatives of the
    group are the eigenvalues of ``-lambda_k U^T diag(nu w) U``; the
    interval ``(min, max)`` is returned.
    """
    group = result.group_of(k)
    _check_fresh(result, group)
    nu_w = np.asarray(direction, dtype=float) * np.asarray(weights, dtype=float)
    lam = float(np.mean(result.eigenvalues[group]))
    U = result.eigenvectors[:, group]
    if len(group) == 1:
        return float(-lam * (nu_w @ U[:, 0] ** 2))
    G = -lam * (U.T * nu_w) @ U
    ev = np.linalg.eigvalsh(0.5 * (G + G.T))
    return float(ev[0]), float(ev[-1])


def _project_spectraplex(P):
    ev, V = np.linalg.eigh(0.5 * (P + P.T))
    # Euclidean projection of the eigenvalues onto the unit simplex
    s = np.sort(ev)[::-1]
    css = np.cumsum(s) - 1.0
    rho = np.nonzero(s - css / np.arange(1, len(s) + 1) > 0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return (V * np.maximum(ev - tau, 0.0)) @ V.T


def min_norm_supergradient(U, lam, weights, free, iters: int = 500):
    """Minimum-norm element of the Clarke superdifferential of ``min`` over a block.

    Candidates are ``g(P)_v = -lam * u(v)^T P u(v)`` for ``P`` in the
    spectraplex; each is projected onto mass-preserving perturbations
    supported on ``free``.  The minimizer is the steepest ascent direction of
    the smallest eigenvalue of the block.

    Returns ``(direction, P)``.
    """
    m = U.shape[1]
    w = weights
    Uf = U[free]
    wf = w[free]
    Z = np.einsum("vi,vj->vij", Uf, Uf).reshape(len(Uf), m * m)
    Zc = Z - (wf @ Z) / wf.sum()
    H = (lam**2) * (Zc.T * wf) @ Zc
    H = 0.5 * (H + H.T)
    L = max(np.linalg.eigvalsh(H)[-1], 1e-300)
    P = np.eye(m) / m
    Y, t_acc = P, 1.0
    for _ in range(iters):
        grad = (2.0 * H @ Y.ravel()).reshape(m, m)
        P_new = _project_spectraplex(Y - grad / (2.0 * L))
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_acc**2))
        Y = P_new + ((t_acc - 1.0) / t_new) * (P_new - P)
        if np.max(np.abs(P_new - P)) < 1e-13:
            P = P_new
            break
        P, t_acc = P_new, t_new
    g = -lam * np.einsum("vi,ij,vj->v", U, P, U)
    d = np.zeros_like(g)
    d[free] = g[free] - (wf @ g[free]) / wf.sum()
    return d, P


def ascent_direction(result: SpectralResult, k: int, density: DensityField, window: float):
    """Multiplicity-aware ascent direction for ``lambda_k``.

    The block is every computed index ``j >= k`` with
    ``lambda_j <= (1 + window) lambda_k``; maximizing its smallest member is a
    lower bound for ``lambda_k`` itself (eigenvalues below ``k`` are free to
    drop).  Vertices sitting on a bound are excluded unless the direction
    moves them into the box.
    """
    lam = result.eigenvalues
    lam_k = lam[k]
    block = np.flatnonzero((np.arange(len(lam)) >= k) & (lam <= lam_k * (1.0 + window)))
    U = result.eigenvectors[:, block]
    mu, w = density.values, density.weights
    at_lo = mu <= density.lower_bound + CLAMP_TOL
    at_hi = mu >= density.cap - CLAMP_TOL * max(1.0, density.cap)
    free = ~(at_lo | at_hi)
    if not free.any():
        free = np.ones_like(free)
    d, P = min_norm_supergradient(U, lam_k, w, free)
    g = -lam_k * np.einsum("vi,ij,vj->v", U, P, U)
    shift = (w[free] @ g[free]) / w[free].sum()
    joins = (at_lo & (g - shift > 0)) | (at_hi & (g - shift < 0))
    if joins.any():
        free = free | joins
        d, P = min_norm_supergradient(U, lam_k, w, free)
    return d, block


@dataclass
class IterationRecord:
    stage: int
    cap: float
    iteration: int
    lambda_k: float
    eigenvalues: list
    step: float
    step_norm: float
    direction_norm: float
    block_size: int
    cap_set_area: float
    negative_set_area: float
    accepted: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class LevelSetReport:
    cap: float
    cap_set_area: float
    negative_set_area: float

    @property
    def scaled_cap_area(self) -> float:
        return self.cap * self.cap_set_area

    def as_dict(self) -> dict:
        return {
            "cap": self.cap,
            "cap_set_area": self.cap_set_area,
            "negative_set_area": self.negative_set_area,
            "scaled_cap_area": self.scaled_cap_area,
        }


@dataclass
class StageRecord:
    cap: float
    lambda_estimate: float
    eigenvalues: list
    iterations: int
    level_sets: LevelSetReport
    density: np.ndarray = field(repr=False)
    failed: bool = False
    message: str = ""


@dataclass
class OptimizationTrace:
    iterations: list = field(default_factory=list)
    stages: list = field(default_factory=list)

    @property
    def stage_estimates(self) -> np.ndarray:
        return np.array([s.lambda_estimate for s in self.stages])


def level_sets(density: DensityField) -> LevelSetReport:
    """Areas of the cap set ``{mu = cap}`` and the negative set ``{mu < 0}``."""
    mu, w = density.values, density.weights
    cap = density.cap
    on_cap = mu >= cap - CLAMP_TOL * max(1.0, cap) if np.isfinite(cap) else np.zeros(mu.shape, bool)
    return LevelSetReport(float(cap), float(w[on_cap].sum()), float(w[mu < 0].sum()))


@dataclass
class SpectralObjective:
    """Evaluates ``lambda_k`` and the eigenvalues just above it for a density."""

    stiffness: object
    k: int
    extra: int = 4
    tol: float = 1e-10
    seed: int = 0
    allow_indefinite: bool = False
    cluster_tol: float = CLUSTER_TOL
    n_evals: int = 0

    def __call__(self, density: DensityField, window: float = 0.0) -> SpectralResult:
        mdiag = density.values * density.weights
        count = self.k + 1 + self.extra
        while True:
            count = min(count, int(np.count_nonzero(mdiag)))
            res = solve_smallest(
                self.stiffness,
                mdiag,
                count,
                tol=self.tol,
                seed=self.seed,
                allow_indefinite=self.allow_indefinite,
                cluster_tol=self.cluster_tol,
            )
            self.n_evals += 1
            lam = res.eigenvalues
            top_ok = lam[-1] > lam[self.k] * (1.0 + max(window, self.cluster_tol))
            if top_ok or count >= np.count_nonzero(mdiag):
                return res
            count += 4


def ascend(
    k: int,
    fs: FeasibleSet,
    start: DensityField,
    objective: SpectralObjective,
    budget: int = 500,
    window: float = 0.02,
    initial_move: float = 0.01,
    max_backtracks: int = 30,
    stop_norm: float = 1e-8,
    stall_tol: float = 1e-8,
    patience: int = 10,
    trace: Optional[OptimizationTrace] = None,
    stage: int = 0,
):
    """Projected ascent of ``lambda_k`` inside ``fs`` from ``start``.

    Each iteration computes the multiplicity-aware direction ``d`` and tries
    ``project(mu + s d)``, halving ``s`` until the true ``lambda_k`` increases
    (at most ``max_backtracks`` halvings).  The first trial step moves an
    ``initial_move`` fraction of the mass; later ones start from twice the
    last accepted step.  Stops after ``budget`` iterations or when the
    projected step has w-norm below ``stop_norm``, or when ``patience``
    accepted iterations gained less than ``stall_tol`` relative.  Returns the
    best density seen and the trace.
    """
    if trace is None:
        trace = OptimizationTrace()
    if not start.is_feasible(1e-8) or start.cap != fs.cap or start.lower_bound != fs.lower_bound:
        start = project_to_feasible(start.values, fs)
    w = fs.weights
    mu = start
    try:
        res = objective(mu, window)
    except ConvergenceError as exc:
        exc.iterate = mu
        raise
    best_mu, best_lam = mu, float(res.eigenvalues[k])
    step = None
    history = [best_lam]
    it = 0
    for it in range(1, budget + 1):
        d, block = ascent_direction(res, k, mu, window)
        d_norm = float(np.sqrt(w @ d**2))
        if d_norm == 0.0:
            break
        if step is None:
            step = initial_move / float(w @ np.abs(d))
        else:
            step *= 2.0
        accepted = False
        for _ in range(max_backtracks + 1):
            trial = project_to_feasible(mu.values + step * d, fs)
            move = trial.values - mu.values
            step_norm = float(np.sqrt(w @ move**2))
            if step_norm < stop_norm:
                break
            try:
                trial_res = objective(trial, window)
            except ConvergenceError:
                step *= 0.5
                continue
            if trial_res.eigenvalues[k] > res.eigenvalues[k]:
                accepted = True
                break
            step *= 0.5
        ls = level_sets(trial if accepted else mu)
        trace.iterations.append(
            IterationRecord(
                stage=stage,
                cap=float(fs.cap),
                iteration=it,
                lambda_k=float((trial_res if accepted else res).eigenvalues[k]),
                eigenvalues=[float(x) for x in (trial_res if accepted else res).eigenvalues],
                step=float(step),
                step_norm=step_norm,
                direction_norm=d_norm,
                block_size=int(len(block)),
                cap_set_area=ls.cap_set_area,
                negative_set_area=ls.negative_set_area,
                accepted=accepted,
            )
        )
        if not accepted:
            break
        mu, res = trial, trial_res
        lam_k = float(res.eigenvalues[k])
        if lam_k > best_lam:
            best_mu, best_lam = mu, lam_k
        history.append(best_lam)
        if len(history) > patience and best_lam - history[-1 - patience] < stall_tol * abs(best_lam):
            break
    logger.debug("stage %d cap %g: lambda_k=%.6g after %d iterations", stage, fs.cap, best_lam, it)
    return best_mu, trace, best_lam, it


def continuation(
    k: int,
    caps,
    mesh: TriangleMesh,
    start: Optional[DensityField] = None,
    lower_bound: float = 0.0,
    budget: int = 500,
    window: float = 0.02,
    tol: float = 1e-10,
    seed: int = 0,
    extra: int = 4,
    trace: Optional[OptimizationTrace] = None,
):
    """Run :func:`ascend` for each cap in ``caps`` with warm starts.

    Returns ``(final_density, trace)``.  A stage whose eigensolve fails is
    recorded as failed and the next stage restarts from the last good
    iterate.
    """
    caps = [float(c) for c in caps]
    if any(b <= a for a, b in zip(caps, caps[1:])):
        raise ConfigurationError("caps must be strictly increasing")
    w = mesh.vertex_weights()
    if caps[0] <= 1.0 / w.sum():
        raise ConfigurationError("first cap must exceed 1/area")
    objective = SpectralObjective(
        assemble_stiffness(mesh),
        k,
        extra=extra,
        tol=tol,
        seed=seed,
        allow_indefinite=lower_bound < 0,
    )
    trace = trace if trace is not None else OptimizationTrace()
    if start is None:
        start = DensityField.uniform(mesh, lower_bound, caps[0])
    current = start
    for s, cap in enumerate(caps):
        fs = FeasibleSet(lower_bound, cap, w)
        warm = project_to_feasible(current.values, fs)
        try:
            best, _, lam, n_it = ascend(
                k, fs, warm, objective, budget=budget, window=window, trace=trace, stage=s
            )
        except ConvergenceError as exc:
            logger.warning("stage %d (cap %g) failed: %s", s, cap, exc)
            trace.stages.append(
                StageRecord(cap, float("nan"), [], 0, level_sets(warm), warm.values.copy(), True, str(exc))
            )
            current = warm
            continue
        final = objective(best)
        trace.stages.append(
            StageRecord(
                cap=cap,
                lambda_estimate=lam,
                eigenvalues=[float(x) for x in final.eigenvalues],
                iterations=n_it,
                level_sets=level_sets(best),
                density=best.values.copy(),
            )
        )
        current = best
    return current, trace

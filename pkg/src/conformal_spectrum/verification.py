"""Named verification suites behind ``conformal-spectrum verify``."""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from .assembly import DensityField, assemble_mass, assemble_stiffness
from .certify import disk_dirichlet_spectrum, sphere_spectrum, torus_spectrum
from .config import RunConfig
from .density_opt import FeasibleSet, eigenvalue_derivative, project_to_feasible
from .eigensolver import solve_dirichlet, solve_smallest
from .surface import build_sphere_mesh, build_torus_mesh, geodesic_ball

SUITES = ("oracles", "gradients", "projection", "endtoend-k1", "endtoend-k2")


@dataclass
class Check:
    name: str
    passed: bool
    value: str
    target: str
    seconds: float = 0.0


def _rel(a, b):
    return np.abs(np.asarray(a) - b) / abs(b)


# ---------------------------------------------------------------------------
# oracles


def sphere_oracle(level: int = 4, tol: float = 1e-10):
    """Normalized eigenvalues 1..8 of the uniform density on an icosphere."""
    mesh = build_sphere_mesh(level)
    A = assemble_stiffness(mesh)
    mu = DensityField.uniform(mesh)
    res = solve_smallest(A, assemble_mass(mesh, mu), 9, tol=tol)
    return res.eigenvalues[1:9]


def torus_oracle(n: int = 64, tol: float = 1e-10):
    mesh = build_torus_mesh(n, n)
    A = assemble_stiffness(mesh)
    res = solve_smallest(A, assemble_mass(mesh, DensityField.uniform(mesh)), 5, tol=tol)
    return res.eigenvalues[1:5]


def disk_oracle(n: int = 300, width: float = 2.3, tol: float = 1e-10):
    """Dirichlet eigenvalues of the unit disk cut from a fine flat torus.

    Returns ``(eigenvalues, n_interior)``.
    """
    mesh = build_torus_mesh(n, n, width, width)
    center = (n // 2) * n + n // 2
    ball = geodesic_ball(mesh, center, 1.0)
    res = solve_dirichlet(ball, np.ones(ball.n_vertices), 3, tol=tol)
    return res.eigenvalues, len(ball.interior_vertices)


def run_oracles():
    checks = []
    t = time.perf_counter()
    lam = sphere_oracle()
    dt = time.perf_counter() - t
    s = sphere_spectrum(2)
    e1, e2 = _rel(lam[:3], s[1][3]), _rel(lam[3:8], s[2][3])
    checks.append(Check("sphere l=1 triple", bool(e1.max() < 0.01 and dt < 60), f"max rel err {e1.max():.2e}", "< 1e-2"))
    checks.append(Check("sphere l=2 quintuple", bool(e2.max() < 0.02 and dt < 60), f"max rel err {e2.max():.2e}", "< 2e-2", dt))
    t = time.perf_counter()
    lam = torus_oracle()
    dt = time.perf_counter() - t
    ref, _ = torus_spectrum(1.0, 1.0, 5)
    e = _rel(lam, ref[1])
    checks.append(Check("torus first four", bool(e.max() < 0.01 and dt < 30), f"max rel err {e.max():.2e}", "< 1e-2", dt))
    t = time.perf_counter()
    lam, n_int = disk_oracle()
    dt = time.perf_counter() - t
    ref = disk_dirichlet_spectrum(1.0, 3)
    e = _rel(lam, ref)
    checks.append(Check("disk first", bool(e[0] < 0.005), f"rel err {e[0]:.2e} ({n_int} interior)", "< 5e-3", dt))
    checks.append(Check("disk second/third", bool(e[1:].max() < 0.01), f"max rel err {e[1:].max():.2e}", "< 1e-2"))
    return checks


# ---------------------------------------------------------------------------
# gradients


def symmetry_broken_density(mesh, seed: int = 0, amplitude: float = 0.3) -> DensityField:
    """Unit-mass density ``1 + a * q(x)`` with a random quadratic ``q`` that splits the degenerate levels."""
    rng = np.random.default_rng(seed)
    x = mesh.vertices / np.linalg.norm(mesh.vertices, axis=1, keepdims=True)
    B = rng.standard_normal((3, 3))
    q = np.einsum("vi,ij,vj->v", x, B + B.T, x) + x @ rng.standard_normal(3)
    q = q / np.abs(q).max()
    w = mesh.vertex_weights()
    mu = 1.0 + amplitude * q
    return DensityField(mu / (w @ mu), w)


def gradient_errors(level: int = 3, k: int = 1, n_dirs: int = 20, h: float = 1e-5, seed: int = 0):
    """Relative errors of the analytic derivative against central differences."""
    mesh = build_sphere_mesh(level)
    A = assemble_stiffness(mesh)
    mu = symmetry_broken_density(mesh, seed)
    w = mu.weights

    def lam_k(values):
        return solve_smallest(A, values * w, k + 3, tol=1e-13, seed=seed).eigenvalues[k]

    base = solve_smallest(A, mu.values * w, k + 3, tol=1e-13, seed=seed)
    if len(base.group_of(k)) != 1:
        raise ValueError("eigenvalue is not simple at the test density")
    rng = np.random.default_rng(seed + 1)
    errs = []
    for _ in range(n_dirs):
        nu = rng.standard_normal(mesh.n_vertices)
        d = eigenvalue_derivative(base, k, nu, w)
        fd = (lam_k(mu.values + h * nu) - lam_k(mu.values - h * nu)) / (2 * h)
        errs.append(abs(d - fd) / abs(fd))
    return np.array(errs)


def run_gradients():
    t = time.perf_counter()
    errs = gradient_errors()
    ok = int(np.sum(errs < 1e-4))
    return [Check("derivative vs central differences", ok >= 19, f"{ok}/20 below 1e-4 (max {errs.max():.1e})", ">= 19/20", time.perf_counter() - t)]


# ---------------------------------------------------------------------------
# projection


def brute_force_projection(raw, w, lo, hi):
    """Exact projection by enumerating lower/free/upper patterns and checking KKT."""
    raw, w = np.asarray(raw, float), np.asarray(w, float)
    best, best_obj = None, np.inf
    for pattern in itertools.product((0, 1, 2), repeat=len(raw)):
        p = np.array(pattern)
        free = p == 1
        mu = np.where(p == 0, lo, hi).astype(float)
        if free.any():
            t = (1.0 - w[~free] @ mu[~free] - w[free] @ raw[free]) / w[free].sum()
            mu[free] = raw[free] + t
            if np.any(mu[free] < lo - 1e-12) or np.any(mu[free] > hi + 1e-12):
                continue
            # multiplier signs: lower-clamped need raw + t <= lo, upper need >= hi
            if np.any(raw[p == 0] + t > lo + 1e-12) or np.any(raw[p == 2] + t < hi - 1e-12):
                continue
        elif abs(w @ mu - 1.0) > 1e-12:
            continue
        obj = w @ (mu - raw) ** 2
        if obj < best_obj:
            best, best_obj = mu, obj
    return best


def random_projection_instance(rng):
    n = int(rng.integers(1, 7))
    w = rng.uniform(0.05, 1.0, n)
    total = w.sum()
    lo = float(rng.choice([0.0, -0.5])) if n > 1 else 0.0
    lo = min(lo, 0.5 / total)
    hi = (1.0 / total) * float(rng.uniform(1.05, 4.0)) if n > 1 else 2.0 / total
    raw = rng.normal(1.0 / total, 2.0 / total, n)
    return raw, w, lo, hi


def projection_errors(n_instances: int = 100, seed: int = 0):
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(n_instances):
        raw, w, lo, hi = random_projection_instance(rng)
        got = project_to_feasible(raw, FeasibleSet(lo, hi, w)).values
        ref = brute_force_projection(raw, w, lo, hi)
        errs.append(float(np.max(np.abs(got - ref))))
    return np.array(errs)


def run_projection():
    t = time.perf_counter()
    errs = projection_errors()
    return [Check("projection vs enumeration", bool(errs.max() < 1e-8), f"max err {errs.max():.1e}", "< 1e-8", time.perf_counter() - t)]


# ---------------------------------------------------------------------------
# end to end


def run_endtoend_k1(level: int = 4):
    from .pipeline import run_pipeline

    t = time.perf_counter()
    res = run_pipeline(RunConfig(surface="sphere", level=level, k=1).validate())
    dt = time.perf_counter() - t
    rep = res.report
    if res.failed:
        return [Check("k=1 pipeline", False, rep["error"], "completes", dt)]
    lam = rep["optimization"]["lambda_k"]
    cert = rep["certificate"]
    e = abs(lam - 8 * np.pi) / (8 * np.pi)
    return [
        Check("k=1 lambda_1 near 8 pi", bool(e < 0.03 and dt < 600), f"{lam / np.pi:.4f} pi (rel {e:.1e})", "within 3%", dt),
        Check("k=1 no atoms", rep["decomposition"]["K"] == 0, f"K={rep['decomposition']['K']}", "K = 0"),
        Check("k=1 stage estimates nondecreasing", rep["checks"]["stage_estimates_nondecreasing"], str(rep["optimization"]["stage_estimates"]), "monotone"),
        Check("certificate rank", cert["ell"] == 3, f"ell={cert['ell']}", "3"),
        Check("certificate sphere defect", cert["sphere_defect"] < 1e-2, f"{cert['sphere_defect']:.1e}", "< 1e-2"),
        Check("certificate energy identity", cert["energy_identity_error"] < 0.05, f"{cert['energy_identity_error']:.1e}", "< 5e-2"),
    ]


def run_endtoend_k2(level: int = 4):
    from .pipeline import run_pipeline

    checks = []
    lams = {}
    for lev in (level - 1, level):
        t = time.perf_counter()
        res = run_pipeline(RunConfig(surface="sphere", level=lev, k=2).validate())
        dt = time.perf_counter() - t
        rep = res.report
        if res.failed:
            return checks + [Check(f"k=2 pipeline level {lev}", False, rep["error"], "completes", dt)]
        lams[lev] = rep["optimization"]["lambda_k"]
    lam = lams[level]
    dec = rep["decomposition"]
    checks.append(Check("k=2 lambda_2 >= 11 pi", bool(lam >= 11 * np.pi and dt < 1800), f"{lam / np.pi:.4f} pi", ">= 11 pi", dt))
    checks.append(Check("k=2 refinement trend", bool(lams[level - 1] < lam <= 16 * np.pi * 1.01),
                        f"{lams[level - 1] / np.pi:.3f} pi -> {lam / np.pi:.3f} pi", "increasing toward 16 pi"))
    checks.append(Check("k=2 one concentration", dec["K"] == 1, f"K={dec['K']}", "K = 1"))
    c1 = dec["atoms"][0]["weight"] if dec["atoms"] else float("nan")
    checks.append(Check("k=2 atom weight", bool(abs(c1 - 0.5) <= 0.15), f"{c1:.4f}", "1/2 +- 0.15"))
    checks.append(Check("k=2 regular mass", bool(abs(dec["regular_mass"] - 0.5) <= 0.15), f"{dec['regular_mass']:.4f}", "1/2 +- 0.15"))
    checks.append(Check("k=2 quantization", rep["quantization"]["passed"], f"atom d={rep['quantization']['atom_distances']}", "passed"))
    return checks


RUNNERS = {
    "oracles": run_oracles,
    "gradients": run_gradients,
    "projection": run_projection,
    "endtoend-k1": run_endtoend_k1,
    "endtoend-k2": run_endtoend_k2,
}


def run_suite(name: str):
    if name not in RUNNERS:
        raise KeyError(name)
    return RUNNERS[name]()

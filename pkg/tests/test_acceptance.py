"""One test per acceptance criterion; each records a PASS/FAIL line in the terminal summary."""
import time

import numpy as np
import pytest

from conformal_spectrum import AtomDetector, ConformalEigenvalueMaximizer, DensityField, build_torus_mesh
from conformal_spectrum.config import RunConfig
from conformal_spectrum.density_opt import level_sets
from conformal_spectrum.pipeline import _jsonable, run_pipeline
from conformal_spectrum.verification import (
    disk_oracle,
    gradient_errors,
    random_projection_instance,
    sphere_oracle,
    torus_oracle,
)
from conformal_spectrum import FeasibleSet, project_to_feasible

from .oracles import disk_eigenvalues, enumerate_projection, flatten_numbers
from .synthetic import bump_density, separated_vertices, smooth_field

PI = np.pi
CAPS = [4.0, 8.0, 16.0, 32.0]


def _monotone(est, rel=1e-6):
    est = np.asarray(est)
    return bool(np.all(est[1:] >= est[:-1] - rel * np.abs(est[:-1])))


@pytest.fixture(scope="module")
def torus_k2_run():
    return run_pipeline(RunConfig(surface="torus", nx=32, ny=32, k=2, class_table=[4 * PI**2]).validate())


def test_criterion_01_sphere_oracle(record_criterion):
    t = time.perf_counter()
    lam = sphere_oracle(level=4)
    dt = time.perf_counter() - t
    e1 = np.max(np.abs(lam[:3] - 8 * PI)) / (8 * PI)
    e2 = np.max(np.abs(lam[3:8] - 24 * PI)) / (24 * PI)
    ok = e1 < 0.01 and e2 < 0.02 and dt < 60
    record_criterion(1, ok, f"sphere L4: l=1 err {e1:.2e} (<1e-2), l=2 err {e2:.2e} (<2e-2), {dt:.1f}s (<60s)")
    assert ok


def test_criterion_02_torus_oracle(record_criterion):
    t = time.perf_counter()
    lam = torus_oracle(64)
    dt = time.perf_counter() - t
    e = np.max(np.abs(lam - 4 * PI**2)) / (4 * PI**2)
    ok = e < 0.01 and dt < 30
    record_criterion(2, ok, f"torus 64x64: lambda_1..4 err {e:.2e} (<1e-2), {dt:.1f}s (<30s)")
    assert ok


def test_criterion_03_disk_oracle(record_criterion):
    lam, n_int = disk_oracle()
    ref = disk_eigenvalues(3)
    assert np.isclose(ref[0], 5.783186, atol=1e-6) and np.isclose(ref[1], 14.68197, atol=1e-5)
    e = np.abs(lam - ref) / ref
    ok = e[0] < 0.005 and e[1:].max() < 0.01 and 40_000 <= n_int <= 60_000
    record_criterion(3, ok, f"disk ({n_int} interior): lambda_1 err {e[0]:.2e} (<5e-3), lambda_2,3 err {e[1:].max():.2e} (<1e-2)")
    assert ok


def test_criterion_04_gradient(record_criterion):
    errs = gradient_errors(level=3, k=1, n_dirs=20, h=1e-5)
    n_ok = int(np.sum(errs < 1e-4))
    ok = n_ok >= 19
    record_criterion(4, ok, f"derivative vs central differences: {n_ok}/20 below 1e-4 (max {errs.max():.1e})")
    assert ok


def test_criterion_05_projection(record_criterion):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        raw, w, lo, hi = random_projection_instance(rng)
        got = project_to_feasible(raw, FeasibleSet(lo, hi, w)).values
        worst = max(worst, float(np.max(np.abs(got - enumerate_projection(raw, w, lo, hi)))))
    ok = worst < 1e-8
    record_criterion(5, ok, f"100 instances vs clamp-pattern enumeration: max err {worst:.1e} (<1e-8)")
    assert ok


def test_criterion_06_monotonicity(record_criterion, sphere_k1_run, sphere_k2_run, torus_k2_run):
    runs = {"sphere k=1": sphere_k1_run, "sphere k=2": sphere_k2_run, "torus k=2": torus_k2_run}
    parts, ok = [], True
    for name, run in runs.items():
        opt = run.report["optimization"]
        est = opt["stage_estimates"]
        good = [s["cap"] for s in opt["stages"]] == CAPS and _monotone(est)
        ok &= good
        parts.append(f"{name} {'ok' if good else 'NOT monotone'}")
    record_criterion(6, ok, "stage estimates nondecreasing (1e-6 rel): " + ", ".join(parts))
    assert ok


def test_criterion_07_level_sets(record_criterion, torus_k2_run):
    trend = torus_k2_run.report["checks"]["level_sets"]
    areas = trend["scaled_cap_areas"]
    binding = trend["positive_stages"] == len(CAPS) and trend["ratio_below_10"]
    # negative-half mode: bound -1/2 from a start that is negative on a large set
    mesh = build_torus_mesh(16, 16)
    w = mesh.vertex_weights()
    start = 1.0 + 1.4 * np.cos(2 * PI * mesh.vertices[:, 0])
    assert w[start < 0].sum() > 0.1
    est = ConformalEigenvalueMaximizer(k=2, caps=CAPS, lower_bound=-0.5, budget=60).fit(mesh, start)
    neg = [level_sets(DensityField(d, w, -0.5, c)).negative_set_area for c, d in est.stages_]
    half_ok = len(neg) == len(CAPS) and max(neg) < 1e-3
    ok = bool(binding and half_ok)
    record_criterion(
        7, ok,
        f"torus k=2 n*area(E_n) {['%.3f' % a for a in areas]} ratio {trend['ratio']:.2f} (<10); "
        f"negative-half mode max area(E_-) {max(neg):.1e} (<1e-3)",
    )
    assert ok


def test_criterion_08_sphere_k1(record_criterion, sphere_k1_run):
    rep = sphere_k1_run.report
    lam = rep["optimization"]["lambda_k"]
    err = abs(lam - 8 * PI) / (8 * PI)
    K = rep["decomposition"]["K"]
    dt = rep["provenance"]["wall_seconds"]
    ok = rep["status"] == "completed" and err < 0.03 and K == 0 and dt < 600
    record_criterion(8, ok, f"sphere L4 k=1: lambda_1 = {lam / PI:.4f} pi (err {err:.1e} <3e-2), K={K}, {dt:.0f}s (<600s)")
    assert ok


def test_criterion_09_sphere_k2(record_criterion, sphere_k2_run, sphere_k2_coarse_run):
    rep = sphere_k2_run.report
    lam = rep["optimization"]["lambda_k"]
    coarse = sphere_k2_coarse_run.report["optimization"]["lambda_k"]
    dec = rep["decomposition"]
    c1 = dec["atoms"][0]["weight"] if dec["K"] >= 1 else float("nan")
    Ar = dec["regular_mass"]
    q = rep["quantization"]
    dt = rep["provenance"]["wall_seconds"] + sphere_k2_coarse_run.report["provenance"]["wall_seconds"]
    ok = (
        lam >= 11 * PI
        and coarse < lam <= 16 * PI * 1.01
        and dec["K"] == 1
        and abs(c1 - 0.5) <= 0.15
        and abs(Ar - 0.5) <= 0.15
        and q["passed"]
        and dt < 1800
    )
    record_criterion(
        9, ok,
        f"sphere k=2: lambda_2 {coarse / PI:.3f} pi (L3) -> {lam / PI:.3f} pi (L4, >=11 pi); K={dec['K']}, "
        f"c_1={c1:.3f}, A_r={Ar:.3f} (1/2 +- 0.15), quantization {'passed' if q['passed'] else 'failed'}, {dt:.0f}s",
    )
    assert ok


def test_criterion_10_bump_detector(record_criterion):
    mesh = build_torus_mesh(64, 64)
    w = mesh.vertex_weights()
    h = mesh.mean_edge_length()
    rng = np.random.default_rng(10)
    sound, worst = 0, 0.0
    for i in range(20):
        K = 1 + i % 3
        centers = separated_vertices(mesh, rng, K, 0.25)
        weights = list(rng.uniform(0.1, 0.4 if K < 3 else 0.25, K))
        mu = bump_density(mesh, centers, weights, 0.7 * h, rng)
        atoms = AtomDetector(k=4, normalize=False).fit(mesh, mu).atoms_
        found = {a.vertex: a.weight for a in atoms}
        if len(atoms) == K and set(found) == set(centers):
            err = max(abs(found[c] - m) for c, m in zip(centers, weights))
            worst = max(worst, err)
            sound += err < 0.05
    specific = 0
    for _ in range(20):
        mu = smooth_field(mesh, rng)
        specific += len(AtomDetector(k=4, normalize=False).fit(mesh, mu / (w @ mu)).atoms_) == 0
    ok = sound == 20 and specific == 20
    record_criterion(10, ok, f"bumps recovered {sound}/20 (max weight err {worst:.3f} <0.05); smooth K=0 {specific}/20")
    assert ok


def test_criterion_11_certificate(record_criterion, sphere_k1_run):
    cert = sphere_k1_run.report["certificate"]
    ok = cert["ell"] == 3 and cert["sphere_defect"] < 1e-2 and cert["energy_identity_error"] < 0.05
    record_criterion(
        11, ok,
        f"sphere k=1: ell={cert['ell']}, defect {cert['sphere_defect']:.1e} (<1e-2), energy err {cert['energy_identity_error']:.1e} (<5e-2)",
    )
    assert ok


def test_criterion_12_determinism(record_criterion):
    cfg = dict(surface="sphere", level=2, k=2, caps=[4.0, 8.0], budget=20, start="jitter", seed=99,
               bootstrap_budget=10)
    # compare the report as written to disk
    a = _jsonable(run_pipeline(RunConfig(**cfg).validate()).report)
    b = _jsonable(run_pipeline(RunConfig(**cfg).validate()).report)
    a.pop("provenance")
    b.pop("provenance")
    fa, fb = flatten_numbers(a), flatten_numbers(b)
    same_keys = fa.keys() == fb.keys()
    diff = max((abs(fa[k] - fb[k]) for k in fa if k in fb), default=0.0)
    ok = same_keys and diff <= 1e-10 and a["status"] == "completed"
    record_criterion(12, ok, f"two runs, {len(fa)} numeric fields: max abs diff {diff:.1e} (<=1e-10)")
    assert ok

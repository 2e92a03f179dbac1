"""End-to-end run: optimize, normalize, decompose, quantize, certify, report."""
from __future__ import annotations

import csv
import json
import logging
import platform
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from ._version import __version__
from .assembly import assemble_mass, assemble_stiffness
from .certify import harmonic_map_certificate
from .concentration import (
    check_quantization,
    default_sphere_table,
    membership_report,
    singular_spectrum,
)
from .config import RunConfig
from .eigensolver import solve_smallest
from .estimators import AtomDetector, ConformalEigenvalueMaximizer
from .exceptions import SpectrumError
from .surface import TriangleMesh, build_sphere_mesh, build_torus_mesh

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
SINGULAR_RADII = (8.0, 6.0, 4.0)  # in mean edge lengths
HISTOGRAM_BINS = 20


def build_mesh(cfg: RunConfig) -> TriangleMesh:
    if cfg.surface == "sphere":
        return build_sphere_mesh(cfg.level, cfg.radius)
    return build_torus_mesh(cfg.nx, cfg.ny, cfg.width, cfg.height)


def load_schema() -> dict:
    text = resources.files("conformal_spectrum").joinpath("report.schema.json").read_text()
    return json.loads(text)


def level_set_trend(stages) -> dict:
    """Spread of ``cap * area(cap set)`` over the stages where it is positive.

    A stage with an empty cap set satisfies any ``C / cap`` bound, so it is
    counted as consistent and left out of the ratio.
    """
    scaled = [s.level_sets.scaled_cap_area for s in stages if not s.failed]
    pos = [x for x in scaled if x > 0]
    ratio = max(pos) / min(pos) if pos else 1.0
    neg = [s.level_sets.negative_set_area for s in stages if not s.failed]
    return {
        "scaled_cap_areas": scaled,
        "positive_stages": len(pos),
        "ratio": float(ratio),
        "ratio_below_10": bool(ratio < 10.0),
        "max_negative_set_area": float(max(neg)) if neg else 0.0,
    }


def _nondecreasing(values, rel=1e-6) -> bool:
    v = np.asarray(values, float)
    v = v[np.isfinite(v)]
    return bool(np.all(np.diff(v) >= -rel * np.abs(v[:-1])))


@dataclass
class RunResult:
    report: dict
    mesh: Optional[TriangleMesh] = None
    maximizer: Optional[ConformalEigenvalueMaximizer] = None
    normalized_density: Optional[np.ndarray] = None
    regular_density: Optional[np.ndarray] = None
    failed: bool = False
    extras: dict = field(default_factory=dict)

    @property
    def status(self) -> str:
        return self.report["status"]


def _empty_report(cfg: RunConfig) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "status": "running",
        "error": None,
        "config": cfg.as_dict(),
        "provenance": {
            "package_version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "wall_seconds": None,
        },
        "mesh": None,
        "optimization": None,
        "decomposition": None,
        "quantization": None,
        "singular_spectra": None,
        "regular_spectrum": None,
        "membership": None,
        "certificate": None,
        "checks": {},
    }


def run_pipeline(cfg: RunConfig) -> RunResult:
    """Execute every stage of a run; a solver failure yields a partial report."""
    t0 = time.perf_counter()
    report = _empty_report(cfg)
    result = RunResult(report)
    try:
        _run_stages(cfg, result)
        report["status"] = "completed"
    except (SpectrumError, np.linalg.LinAlgError, ArithmeticError, RuntimeError) as exc:
        logger.error("run failed: %s", exc)
        report["status"] = "failed"
        report["error"] = f"{type(exc).__name__}: {exc}"
        result.failed = True
    report["provenance"]["wall_seconds"] = time.perf_counter() - t0
    return result


def _run_stages(cfg: RunConfig, result: RunResult) -> None:
    report = result.report
    k = cfg.k
    mesh = build_mesh(cfg)
    result.mesh = mesh
    w = mesh.vertex_weights()
    report["mesh"] = {
        "surface": cfg.surface,
        "n_vertices": mesh.n_vertices,
        "n_triangles": mesh.n_triangles,
        "area": mesh.total_area,
        "exact_area": float(mesh.kind.area),
        "mean_edge_length": mesh.mean_edge_length(),
        "euler_characteristic": mesh.euler_characteristic(),
    }

    # optimize
    est = ConformalEigenvalueMaximizer(
        k=k, caps=cfg.caps, lower_bound=cfg.lower_value, budget=cfg.budget, window=cfg.window,
        tol=cfg.eig_tol, start=cfg.start, jitter=cfg.jitter, random_state=cfg.seed,
    )
    est.fit(mesh)
    result.maximizer = est
    trace = est.trace_
    estimates = [float(x) for x in trace.stage_estimates]
    report["optimization"] = {
        "k": k,
        "lambda_k": est.lambda_k_,
        "lambda_k_over_pi": est.lambda_k_ / np.pi,
        "final_eigenvalues": [float(x) for x in est.spectrum_.eigenvalues],
        "final_negative_eigenvalues": [float(x) for x in est.spectrum_.negative_eigenvalues],
        "stage_estimates": estimates,
        "stages": [
            {
                "cap": s.cap,
                "lambda_estimate": s.lambda_estimate,
                "iterations": s.iterations,
                "failed": s.failed,
                "message": s.message,
                "eigenvalues": s.eigenvalues,
                "level_sets": s.level_sets.as_dict(),
            }
            for s in trace.stages
        ],
        "n_iterations": len(trace.iterations),
    }
    report["checks"]["stage_estimates_nondecreasing"] = _nondecreasing(estimates)
    report["checks"]["level_sets"] = level_set_trend(trace.stages)
    if all(s.failed for s in trace.stages):
        raise SpectrumError("every continuation stage failed")

    # normalize and decompose
    det = AtomDetector(k=k, threshold=cfg.threshold)
    det.fit(mesh, est.density_, stages=est.stages_)
    dec = det.decomposition_
    result.normalized_density = det.normalized_density_
    result.regular_density = dec.regular_density
    report["decomposition"] = dec.as_dict()
    report["checks"]["K_le_k_minus_1"] = dec.bound_satisfied

    # quantization
    lam_k = est.lambda_k_
    if cfg.class_table is not None:
        class_table = {j + 1: v for j, v in enumerate(cfg.class_table)}
        class_source = "config"
    else:
        class_table = {}
        for j in range(1, k):
            boot = ConformalEigenvalueMaximizer(
                k=j, caps=cfg.caps, lower_bound=cfg.lower_value,
                budget=cfg.bootstrap_budget or cfg.budget, window=cfg.window,
                tol=cfg.eig_tol, start=cfg.start, jitter=cfg.jitter, random_state=cfg.seed,
            ).fit(mesh)
            class_table[j] = boot.lambda_k_
        class_source = "bootstrap"
    class_table[k] = lam_k
    q = check_quantization(dec, lam_k, default_sphere_table(k), class_table, k=k, tol=cfg.quant_tol)
    report["quantization"] = dict(q.as_dict(), class_table_source=class_source)
    report["checks"]["quantization_passed"] = q.passed

    # singular spectra around the atoms
    h = mesh.mean_edge_length()
    stages = det.normalized_stages_[-2:] if det.normalized_stages_ else [(cfg.caps[-1], det.normalized_density_)]
    spectra, notes = [], []
    for atom in dec.atoms:
        radii = [min(f * h, 0.9 * mesh.kind.max_ball_radius) for f in SINGULAR_RADII]
        try:
            spectra.append(singular_spectrum(mesh, atom.vertex, radii, stages, count=3, tol=cfg.eig_tol))
        except (SpectrumError, ValueError) as exc:
            notes.append(f"atom at vertex {atom.vertex}: {exc}")
    report["singular_spectra"] = {"spectra": [s.as_dict() for s in spectra], "warnings": notes}

    # spectrum of the regular part
    A = assemble_stiffness(mesh)
    mu_r = dec.regular_density
    support = mu_r > 0
    count = min(k + 5, int(support.sum()))
    reg = solve_smallest(A, assemble_mass(mesh, mu_r), count, tol=cfg.eig_tol, seed=cfg.seed,
                         allow_indefinite=bool(np.any(mu_r < 0)))
    report["regular_spectrum"] = {
        "regular_mass": float(dec.regular_mass),
        "eigenvalues": [float(x) for x in reg.eigenvalues],
        "normalized_eigenvalues": [float(x * dec.regular_mass) for x in reg.eigenvalues],
        "multiplicity_groups": [[int(i) for i in g] for g in reg.multiplicity_groups],
    }
    memb = membership_report(lam_k, spectra, reg.eigenvalues, tol=cfg.membership_tol)
    report["membership"] = memb

    # certificate on the eigenspace of the regular part nearest lambda_k
    nontrivial = np.arange(1, len(reg.eigenvalues))
    j = int(nontrivial[np.argmin(np.abs(reg.eigenvalues[1:] - lam_k))])
    near = np.abs(reg.eigenvalues - reg.eigenvalues[j]) <= cfg.cert_window * reg.eigenvalues[j]
    group = np.flatnonzero(near & (np.arange(len(reg.eigenvalues)) > 0))
    cert = harmonic_map_certificate(reg, group, support, tol=cfg.cert_tol, stiffness=A, weights=w)
    energy_target = cert.eigenvalue * float(w[support] @ mu_r[support])
    report["certificate"] = dict(
        cert.as_dict(),
        group=[int(i) for i in group],
        group_eigenvalues=[float(x) for x in reg.eigenvalues[group]],
        energy_identity_target=energy_target,
        energy_identity_error=abs(cert.dirichlet_energy - energy_target) / energy_target,
    )
    report["checks"]["certificate_valid"] = cert.valid
    result.extras.update(regular_spectrum=reg, certificate=cert, detector=det)


# ---------------------------------------------------------------------------
# output files


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else None
    return obj


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        wr.writerows(rows)


def write_outputs(result: RunResult, out_dir) -> dict:
    """Write the report and data files; returns the validated report."""
    out = Path(out_dir)
    (out / "plotdata").mkdir(parents=True, exist_ok=True)
    report = _jsonable(result.report)
    jsonschema.validate(report, load_schema())
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")

    est = result.maximizer
    trace = est.trace_ if est is not None and hasattr(est, "trace_") else None
    with open(out / "trace.jsonl", "w") as fh:
        for rec in trace.iterations if trace else []:
            fh.write(json.dumps(_jsonable(rec.as_dict()), sort_keys=True) + "\n")
    stages = trace.stages if trace else []
    _write_csv(
        out / "stage_summary.csv",
        ["stage", "cap", "lambda_estimate", "iterations", "failed", "cap_set_area",
         "scaled_cap_area", "negative_set_area"],
        [[i, s.cap, repr(s.lambda_estimate), s.iterations, int(s.failed), s.level_sets.cap_set_area,
          s.level_sets.scaled_cap_area, s.level_sets.negative_set_area] for i, s in enumerate(stages)],
    )
    mesh = result.mesh
    if mesh is not None and est is not None and hasattr(est, "density_"):
        mu = est.density_.values
        norm = result.normalized_density if result.normalized_density is not None else np.full_like(mu, np.nan)
        regd = result.regular_density if result.regular_density is not None else np.full_like(mu, np.nan)
        w = mesh.vertex_weights()
        x = mesh.vertices
        _write_csv(
            out / "density_final.csv",
            ["vertex", "x", "y", "z", "weight", "density", "normalized_density", "regular_density"],
            [[v, *map(repr, x[v]), repr(w[v]), repr(mu[v]), repr(norm[v]), repr(regd[v])]
             for v in range(mesh.n_vertices)],
        )
    else:
        _write_csv(out / "density_final.csv", ["vertex", "density"], [])
    _write_csv(
        out / "plotdata" / "eigenvalue_history.csv",
        ["step", "stage", "cap", "iteration", "lambda_k", "accepted", "step_size", "block_size"],
        [[i, r.stage, r.cap, r.iteration, repr(r.lambda_k), int(r.accepted), r.step, r.block_size]
         for i, r in enumerate(trace.iterations if trace else [])],
    )
    rows = []
    for i, s in enumerate(stages):
        if s.failed or mesh is None:
            continue
        w = mesh.vertex_weights()
        lo = min(0.0, float(s.density.min()))
        edges = np.linspace(lo, s.cap, HISTOGRAM_BINS + 1)
        hist, _ = np.histogram(np.clip(s.density, lo, s.cap), bins=edges, weights=s.density * w)
        rows += [[i, s.cap, edges[b], edges[b + 1], repr(float(hist[b]))] for b in range(HISTOGRAM_BINS)]
    _write_csv(out / "plotdata" / "mass_histograms.csv", ["stage", "cap", "bin_left", "bin_right", "mass"], rows)
    _write_csv(
        out / "plotdata" / "level_sets.csv",
        ["stage", "cap", "cap_set_area", "scaled_cap_area", "negative_set_area", "lambda_estimate"],
        [[i, s.cap, s.level_sets.cap_set_area, s.level_sets.scaled_cap_area,
          s.level_sets.negative_set_area, repr(s.lambda_estimate)] for i, s in enumerate(stages)],
    )
    return report

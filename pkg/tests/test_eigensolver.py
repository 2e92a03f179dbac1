import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from conformal_spectrum import (
    ConfigurationError,
    DensityField,
    assemble_mass,
    assemble_stiffness,
    build_sphere_mesh,
    build_torus_mesh,
    geodesic_ball,
    solve_dirichlet,
    solve_smallest,
)
from conformal_spectrum.eigensolver import _count_below, multiplicity_groups, rayleigh_quotient

from .oracles import disk_eigenvalues, sphere_eigenvalues, torus_eigenvalues


def _uniform(mesh):
    mu = DensityField.uniform(mesh)
    return assemble_stiffness(mesh), assemble_mass(mesh, mu)


def test_sphere_level3_against_closed_form(sphere3):
    A, M = _uniform(sphere3)
    res = solve_smallest(A, M, 9)
    ref = sphere_eigenvalues(2) * 4 * np.pi  # unit mass: multiply by area
    assert abs(res.eigenvalues[0]) < 1e-8
    assert np.all(np.abs(res.eigenvalues[1:4] - ref[1:4]) / ref[1:4] < 0.01)
    assert np.all(np.abs(res.eigenvalues[4:9] - ref[4:9]) / ref[4:9] < 0.03)
    assert [len(g) for g in res.multiplicity_groups] == [1, 3, 5]


def test_rectangular_torus_against_closed_form():
    m = build_torus_mesh(48, 32, 1.5, 1.0)
    A, _ = _uniform(m)
    res = solve_smallest(A, assemble_mass(m, np.ones(m.n_vertices)), 7)
    ref = torus_eigenvalues(1.5, 1.0, 7)
    assert np.all(np.abs(res.eigenvalues[1:] - ref[1:]) / ref[1:] < 0.01)


def test_disk_dirichlet_moderate_mesh():
    m = build_torus_mesh(120, 120, 2.3, 2.3)
    ball = geodesic_ball(m, 60 * 120 + 60, 1.0)
    res = solve_dirichlet(ball, np.ones(ball.n_vertices), 3)
    ref = disk_eigenvalues(3)
    assert np.all(np.abs(res.eigenvalues - ref) / ref < 2e-3)
    assert np.all(res.eigenvectors[ball.boundary_vertices] == 0)


def test_mass_orthonormal_and_small_residuals(sphere3, rng):
    A = assemble_stiffness(sphere3)
    mu = rng.uniform(0.2, 2.0, sphere3.n_vertices)
    M = assemble_mass(sphere3, mu)
    res = solve_smallest(A, M, 8)
    U = res.eigenvectors
    assert np.allclose(U.T @ (M @ U), np.eye(8), atol=1e-8)
    assert res.relative_residuals.max() < 1e-8
    assert np.all(np.diff(res.eigenvalues) >= 0)


def test_dense_and_sparse_paths_agree(rng):
    m = build_sphere_mesh(3)  # 642 vertices: sparse path
    A = assemble_stiffness(m)
    mu = rng.uniform(0.5, 1.5, m.n_vertices)
    sparse = solve_smallest(A, mu * m.vertex_weights(), 6).eigenvalues
    dense = scipy.linalg.eigh(A.toarray(), np.diag(mu * m.vertex_weights()), eigvals_only=True)[:6]
    assert np.allclose(sparse, dense, rtol=1e-8, atol=1e-9)


def test_degenerate_clusters_complete(sphere4):
    # single-vector Lanczos alone drops copies of the exact 5- and 7-fold levels
    A, M = _uniform(sphere4)
    md = M.diagonal()
    for count in (8, 9, 13, 16):
        lam = solve_smallest(A, M, count).eigenvalues
        assert _count_below(A, md, lam[-1] * (1 - 1e-6)) <= count - 1
    lam = solve_smallest(A, M, 16).eigenvalues
    assert [len(g) for g in multiplicity_groups(lam)] == [1, 3, 5, 7]


def test_inertia_count(sphere4):
    A, M = _uniform(sphere4)
    md = M.diagonal()
    for tau, expected in [(10.0, 1), (40.0, 4), (100.0, 9), (200.0, 16)]:
        assert _count_below(A, md, tau) == expected


def test_zero_density_gives_harmonic_extension(sphere3):
    A = assemble_stiffness(sphere3)
    mu = np.ones(sphere3.n_vertices)
    hole = sphere3.distances_from(0) < 0.5
    mu[hole] = 0.0
    res = solve_smallest(A, assemble_mass(sphere3, mu), 4)
    inner = np.flatnonzero(hole)
    # (A u)_v = 0 wherever the density vanishes
    assert np.abs((A @ res.eigenvectors)[inner]).max() < 1e-7 * np.abs(A @ res.eigenvectors).max()


def test_deterministic_for_fixed_seed(sphere3, rng):
    A = assemble_stiffness(sphere3)
    md = rng.uniform(0.5, 1.5, sphere3.n_vertices) * sphere3.vertex_weights()
    r1, r2 = solve_smallest(A, md, 5, seed=7), solve_smallest(A, md, 5, seed=7)
    assert np.array_equal(r1.eigenvalues, r2.eigenvalues)
    assert np.array_equal(r1.eigenvectors, r2.eigenvectors)


def test_rejects_bad_arguments(sphere2):
    A, M = _uniform(sphere2)
    with pytest.raises(ConfigurationError):
        solve_smallest(A, M, 3, tol=0.5)
    with pytest.raises(ConfigurationError):
        solve_smallest(A, M, sphere2.n_vertices + 1)
    md = M.diagonal().copy()
    md[0] = -md[0]
    with pytest.raises(ConfigurationError):
        solve_smallest(A, md, 3)
    md = M.diagonal().copy()
    md[5:] = 0.0
    with pytest.raises(ConfigurationError):
        solve_smallest(A, md, 6)


def test_indefinite_mass_matches_general_eigensolver(sphere2):
    A = assemble_stiffness(sphere2)
    w = sphere2.vertex_weights()
    mu = np.full(sphere2.n_vertices, 1.0)
    mu[sphere2.distances_from(0) < 0.4] = -0.5
    mu /= w @ mu
    res = solve_smallest(A, mu * w, 4, allow_indefinite=True)
    # oracle: nonsymmetric QZ on the indefinite pencil
    ev = scipy.linalg.eig(A.toarray(), np.diag(mu * w), right=False)
    ev = np.sort(ev.real[np.isfinite(ev) & (np.abs(ev.imag) < 1e-8)])
    assert np.sum(ev < -1e-8) >= 1  # the negative region produces negative eigenvalues
    nonneg = ev[ev > -1e-8]
    assert np.allclose(res.eigenvalues, nonneg[:4], rtol=1e-8, atol=1e-8)
    assert np.all(res.negative_eigenvalues < 0)


def test_rayleigh_quotient_of_eigenvector(sphere3):
    A, M = _uniform(sphere3)
    res = solve_smallest(A, M, 3)
    assert np.isclose(rayleigh_quotient(A, M, res.eigenvectors[:, 1]), res.eigenvalues[1])
    with pytest.raises(ZeroDivisionError):
        rayleigh_quotient(A, M, np.zeros(sphere3.n_vertices))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_rayleigh_quotient_bounded_below_on_mean_zero(seed):
    m = build_torus_mesh(8, 8)
    A, M = _uniform(m)
    lam1 = solve_smallest(A, M, 2).eigenvalues[1]
    u = np.random.default_rng(seed).standard_normal(m.n_vertices)
    md = M.diagonal()
    u -= (md @ u) / md.sum()
    assert rayleigh_quotient(A, M, u) >= lam1 * (1 - 1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=12))
def test_multiplicity_groups_partition(values):
    lam = np.sort(values)
    groups = multiplicity_groups(lam, 1e-3)
    assert np.array_equal(np.concatenate(groups), np.arange(len(lam)))
    for g in groups:
        assert np.all(np.diff(lam[g]) <= 1e-3 * np.maximum(np.abs(lam[g][1:]), 1e-300) + 0)


def test_write_csv(tmp_path, sphere2):
    A, M = _uniform(sphere2)
    res = solve_smallest(A, M, 3)
    res.write_csv(tmp_path / "e.csv")
    rows = (tmp_path / "e.csv").read_text().splitlines()
    assert len(rows) == sphere2.n_vertices + 2
    assert rows[0].startswith("vertex,u0")

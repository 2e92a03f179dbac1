import numpy as np
import pytest
import scipy.io
from hypothesis import given, settings, strategies as st

from conformal_spectrum import (
    AssemblyError,
    DensityField,
    TriangleMesh,
    RoundSphere,
    assemble_mass,
    assemble_stiffness,
    build_torus_mesh,
    geodesic_ball,
)
from conformal_spectrum.assembly import (
    dirichlet_energy_by_triangles,
    restrict_density,
    restrict_to_submesh,
    write_matrix_market,
)

from .oracles import triangle_cotan_energy


def test_stiffness_symmetric_rows_sum_to_zero(sphere3):
    A = assemble_stiffness(sphere3)
    assert abs(A - A.T).max() < 1e-14
    assert np.abs(A @ np.ones(sphere3.n_vertices)).max() < 1e-12


def test_stiffness_psd(sphere2):
    ev = np.linalg.eigvalsh(assemble_stiffness(sphere2).toarray())
    assert ev[0] > -1e-12
    assert np.sum(ev < 1e-10) == 1  # connected surface: kernel = constants


def test_stiffness_bitwise_reproducible(sphere3):
    A, B = assemble_stiffness(sphere3), assemble_stiffness(sphere3)
    assert np.array_equal(A.data, B.data) and np.array_equal(A.indices, B.indices)


def test_energy_of_coordinate_function(sphere4):
    # the height function z has energy 8 pi / 3 on the unit sphere
    A = assemble_stiffness(sphere4)
    z = sphere4.vertices[:, 2]
    assert abs(z @ A @ z - 8 * np.pi / 3) / (8 * np.pi / 3) < 3e-3


def test_torus_sine_energy(torus64):
    A = assemble_stiffness(torus64)
    u = np.sin(2 * np.pi * torus64.vertices[:, 0])
    assert abs(u @ A @ u - 2 * np.pi**2) / (2 * np.pi**2) < 2e-3


def test_matches_independent_triangle_oracle(sphere2, rng):
    A = assemble_stiffness(sphere2)
    u = rng.standard_normal(sphere2.n_vertices)
    ref = triangle_cotan_energy(sphere2.vertices, sphere2.triangles, u)
    assert np.isclose(u @ A @ u, ref, rtol=1e-12)
    assert np.isclose(dirichlet_energy_by_triangles(sphere2, u), ref, rtol=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(-5, 5))
def test_energy_invariant_under_constant_shift(seed, c):
    m = build_torus_mesh(6, 5, 1.2, 0.8)
    A = assemble_stiffness(m)
    u = np.random.default_rng(seed).standard_normal(m.n_vertices)
    assert np.isclose(u @ A @ u, (u + c) @ A @ (u + c), rtol=1e-9, atol=1e-9)


def test_zero_area_triangle_rejected():
    v = np.array([[0, 0, 1.0], [0, 0, 1.0], [1.0, 0, 0], [0, 1.0, 0]])
    t = np.array([[0, 1, 2], [0, 2, 3], [1, 3, 2]])
    with pytest.raises(AssemblyError, match="triangle 0"):
        assemble_stiffness(TriangleMesh(v, t, RoundSphere()))


def test_mass_is_lumped_density(sphere3, rng):
    mu = rng.uniform(0.1, 2.0, sphere3.n_vertices)
    M = assemble_mass(sphere3, mu)
    assert np.allclose(M.diagonal(), mu * sphere3.vertex_weights())
    assert M.nnz == sphere3.n_vertices
    with pytest.raises(ValueError):
        assemble_mass(sphere3, mu[:-1])


def test_mass_conformal_scaling(sphere3):
    # scaling the density scales the mass form and leaves the stiffness alone
    mu = DensityField.uniform(sphere3)
    M1 = assemble_mass(sphere3, mu)
    M3 = assemble_mass(sphere3, 3 * mu.values)
    assert np.allclose(M3.diagonal(), 3 * M1.diagonal())
    assert np.isclose(mu.mass, 1.0)


def test_density_field_feasibility(sphere2):
    mu = DensityField.uniform(sphere2, 0.0, 1.0)
    assert mu.is_feasible()
    bad = mu.copy()
    bad.values[0] = -0.1
    assert not bad.is_feasible()
    with pytest.raises(ValueError):
        DensityField(np.ones(3), np.ones(4))


def test_dirichlet_restriction(torus16):
    ball = geodesic_ball(torus16, 8 * 16 + 8, 0.3)
    A = assemble_stiffness(ball)
    M = assemble_mass(ball, np.ones(ball.n_vertices))
    sys = restrict_to_submesh(A, M, ball)
    assert sys.stiffness.shape == (len(ball.interior_vertices),) * 2
    # restricted stiffness is definite
    assert np.linalg.eigvalsh(sys.stiffness.toarray())[0] > 0
    x = np.arange(len(sys.interior), dtype=float)
    full = sys.prolong(x)
    assert np.all(full[ball.boundary_vertices] == 0)
    assert np.array_equal(full[sys.interior], x)


def test_restrict_density_uses_parent_index(torus16):
    ball = geodesic_ball(torus16, 3, 0.25)
    mu = np.arange(torus16.n_vertices, dtype=float)
    assert np.array_equal(restrict_density(mu, ball), ball.parent_index.astype(float))


def test_matrix_market_roundtrip(tmp_path, sphere2):
    A = assemble_stiffness(sphere2)
    write_matrix_market(A, tmp_path / "a.mtx")
    B = scipy.io.mmread(str(tmp_path / "a.mtx"))
    assert abs(A - B).max() < 1e-15

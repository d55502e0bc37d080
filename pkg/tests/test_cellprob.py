import numpy as np
import pytest
from scipy.spatial import cKDTree

from mrhomog.cellprob import (B1_coefficients, empty_stokes_solution, mag_diagnostics, reconstruct_B1,
                              reconstruct_u1, solve_mag_cells, solve_psi_cell, solve_stokes_cell,
                              solve_stokes_cells, solve_theta_cell, _mag_solver)
from mrhomog.efftensors import effective_viscosity
from mrhomog.errors import ArgumentError, DimensionError, StateError
from mrhomog.femcore.forms import mass_form
from mrhomog.geomesh import CellGeometry, build_cell_mesh


@pytest.fixture(scope="module")
def disk_mesh():
    return build_cell_mesh(CellGeometry(2, "disk", 0.25), 0.125)


@pytest.fixture(scope="module")
def disk_cells(disk_mesh):
    return solve_stokes_cells(disk_mesh)


@pytest.fixture(scope="module")
def sphere_mesh():
    return build_cell_mesh(CellGeometry(3, "sphere", 0.25), 0.125)


@pytest.fixture(scope="module")
def sphere_mag(sphere_mesh):
    return solve_mag_cells(sphere_mesh, 2.0)


def test_no_inclusion_stokes_is_zero():
    m = build_cell_mesh(CellGeometry(2, "disk", 0.0), 0.125)
    s = solve_stokes_cells(m)
    assert np.max(np.abs(s.omega)) <= 1e-12
    assert np.max(np.abs(s.pi)) <= 1e-12


def test_stokes_invariants(disk_cells):
    Mp = mass_form(disk_cells.Q)
    ones = np.ones(disk_cells.Q.ndofs)
    for (i, j), r in disk_cells.residuals.items():
        assert r["div"] <= 1e-9
        assert r["solid_strain"] <= 1e-8
        assert r["solve"] <= 1e-10
        assert abs(ones @ Mp @ disk_cells.pi[i, j]) <= 1e-12
    np.testing.assert_allclose(disk_cells.omega[0, 1], disk_cells.omega[1, 0], atol=1e-10)


def test_swap_indices_identical(disk_mesh):
    a = solve_stokes_cell(disk_mesh, 1, 2).omega[0, 1].copy()
    b = solve_stokes_cell(disk_mesh, 2, 1).omega[1, 0].copy()
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_index_range(disk_mesh):
    with pytest.raises(ArgumentError):
        solve_stokes_cell(disk_mesh, 0, 1)
    with pytest.raises(ArgumentError):
        solve_stokes_cell(disk_mesh, 1, 3)


def test_N1212_self_convergence():
    vals = []
    for h in (1 / 8, 1 / 16, 1 / 32):
        m = build_cell_mesh(CellGeometry(2, "disk", 0.25), h)
        vals.append(effective_viscosity(solve_stokes_cells(m))["N_energy"][0, 1, 0, 1])
    d1, d2 = abs(vals[1] - vals[0]), abs(vals[2] - vals[1])
    # successive differences shrink at least linearly; extrapolated error stays small
    assert d2 <= 0.5 * d1
    assert d2 * d2 / (d1 - d2) <= 1e-3
    assert vals[2] > 0.5


def test_gauge_shift_leaves_N_unchanged(disk_cells):
    N0 = effective_viscosity(disk_cells)
    shifted = empty_stokes_solution(disk_cells.mesh)
    shifted.omega[:] = disk_cells.omega
    shifted.pi[:] = disk_cells.pi
    shifted.solved[:] = True
    nn = disk_cells.V.n_nodes
    shifted.omega[:, :, :nn] += 0.37
    shifted.omega[:, :, nn:] -= 1.1
    N1 = effective_viscosity(shifted)
    for key in ("N_flux", "N_energy"):
        assert np.max(np.abs(N1[key] - N0[key])) <= 1e-12


def test_solve_order_independent(disk_mesh, disk_cells):
    other = solve_stokes_cells(disk_mesh, order=[(2, 2), (1, 2), (1, 1)])
    a, b = effective_viscosity(disk_cells), effective_viscosity(other)
    assert np.array_equal(a["N_flux"], b["N_flux"])


def test_reconstruct_u1(disk_cells):
    d = 2
    assert np.all(reconstruct_u1(np.zeros((d, d)), disk_cells) == 0)
    np.testing.assert_allclose(reconstruct_u1(np.eye(d), disk_cells),
                               -(disk_cells.omega[0, 0] + disk_cells.omega[1, 1]), atol=1e-15)
    rng = np.random.default_rng(2)
    D = rng.normal(size=(d, d))
    D = D + D.T
    ref = np.zeros(disk_cells.V.ndofs)
    for i in range(d):
        for j in range(d):
            ref -= D[i, j] * disk_cells.omega[i, j]
    np.testing.assert_allclose(reconstruct_u1(D, disk_cells), ref, atol=1e-12)


def test_reconstruct_u1_incomplete(disk_mesh):
    with pytest.raises(StateError):
        reconstruct_u1(np.eye(2), empty_stokes_solution(disk_mesh))


# ------------------------------------------------------------- magnetics

def test_theta_requires_3d(disk_mesh):
    with pytest.raises(DimensionError):
        solve_theta_cell(disk_mesh, 1)


def test_empty_inclusion_magnetics():
    m = build_cell_mesh(CellGeometry(3, "sphere", 0.0), 0.25)
    assert np.max(np.abs(solve_theta_cell(m, 1))) <= 1e-12
    assert np.max(np.abs(solve_psi_cell(m, 2, 3.0))) <= 1e-12


def test_psi_linearity(sphere_mesh, sphere_mag):
    th = sphere_mag.theta
    for j in range(3):
        np.testing.assert_allclose(solve_psi_cell(sphere_mesh, j + 1, 1.0), th[j], atol=1e-10)
        assert np.linalg.norm(sphere_mag.psi[j] - 2.0 * th[j]) <= 1e-9 * np.linalg.norm(2.0 * th[j])


def test_theta_cubic_symmetry(sphere_mesh, sphere_mag):
    V = sphere_mag.V
    R = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])  # R e1 = e2
    c = 0.5
    Xr = c + (V.nodes - c) @ R.T
    # periodic nodes on faces: compare modulo the period
    dist, idx = cKDTree(V.nodes, boxsize=1.0 + 1e-9).query(np.mod(Xr, 1.0))
    assert np.max(dist) <= 1e-9
    T1 = V.split(sphere_mag.theta[0])
    T2 = V.split(sphere_mag.theta[1])
    np.testing.assert_allclose(T2[idx], T1 @ R.T, atol=1e-9)


def test_theta_weak_residual_random_tests(sphere_mesh, sphere_mag):
    s = _mag_solver(sphere_mesh, sphere_mag.gamma_curl)
    rng = np.random.default_rng(11)
    for j in range(3):
        th = sphere_mag.theta[j]
        for _ in range(20):
            G = s.con.P @ rng.normal(size=s.con.n_reduced)
            # relative to the energy norms of trial and test field
            scale = np.sqrt(th @ (s.A @ th)) * np.sqrt(G @ (s.A @ G))
            assert abs(s.weak_residual(th, j, 1.0, G)) <= 1e-9 * scale


def test_mag_invariants(sphere_mag):
    diag = mag_diagnostics(sphere_mag)
    vs = sphere_mag.volume_fraction
    for j in range(3):
        assert diag[j]["trace_defect"] <= 1e-8
        assert diag[j]["curl_fluid_L2"] <= 1e-6 * np.sqrt(vs) * 1e3
        assert sphere_mag.residuals[j]["theta_solve"] <= 1e-10


def test_reconstruct_B1(sphere_mag):
    z = np.zeros(3)
    assert np.all(reconstruct_B1(np.zeros((3, 3)), z, z, sphere_mag) == 0)
    gradB = np.zeros((3, 3))
    gradB[1, 0] = 0.5   # dB2/dx1
    gradB[0, 1] = -0.5  # dB1/dx2 -> curl B = e3
    a, b = B1_coefficients(gradB, z, z)
    np.testing.assert_allclose(a, [0, 0, 1], atol=1e-15)
    np.testing.assert_allclose(reconstruct_B1(gradB, z, z, sphere_mag), sphere_mag.theta[2], atol=1e-14)
    u, B = np.array([1.0, 0.0, 0.0]), np.array([0.0, 2.0, 0.0])
    a, b = B1_coefficients(np.zeros((3, 3)), u, B)
    assert np.all(a == 0) and np.any(b != 0)
    np.testing.assert_allclose(reconstruct_B1(np.zeros((3, 3)), u, B, sphere_mag),
                               -np.einsum("j,jn->n", b, sphere_mag.psi), atol=1e-14)

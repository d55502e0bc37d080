from types import SimpleNamespace

import numpy as np
import pytest

from mrhomog.errors import DimensionError, PreconditionError, StateError
from mrhomog.femcore.problem import DimensionlessParams
from mrhomog.fields import PROFILES
from mrhomog.geomesh import build_box_mesh
from mrhomog.macroms import apriori_bound, check_smallness, coercivity_constant, data_norms, solve_homogenized
from mrhomog.tensoralg import sym_identity

from mms_cases import induction_mms_errors, ns_mms_errors, tensors as _tensors

CONSTS = SimpleNamespace(kappa_K=0.5, kappa_GR=0.9, kappa_S=0.25)


def test_zero_data_zero_state():
    mesh = build_box_mesh([0, 0], [1, 1], 0.25)
    st = solve_homogenized(_tensors(2), DimensionlessParams(Re=1.0), None, None, mesh)
    assert np.max(np.abs(st.u0)) <= 1e-12
    assert np.max(np.abs(st.Pi)) <= 1e-12


def test_zero_data_zero_state_coupled():
    mesh = build_box_mesh([0, 0, 0], [1, 1, 1], 0.5)
    st = solve_homogenized(_tensors(3), DimensionlessParams(Re=1.0, Rm=1.0, Al=1.0), None, None, mesh)
    for a in (st.u0, st.Pi, st.B0):
        assert np.max(np.abs(a)) <= 1e-12


def test_manufactured_navier_stokes_anisotropic():
    hs, errs = ns_mms_errors((0.1, 0.05))
    assert errs[0] <= 1e-3
    assert np.log(errs[0] / errs[1]) / np.log(hs[0] / hs[1]) >= 2.5


def test_manufactured_induction():
    hs, errs = induction_mms_errors((1 / 4, 1 / 6))
    assert np.log(errs[0] / errs[1]) / np.log(hs[0] / hs[1]) >= 1.5


def test_energy_identity_and_divergence():
    mesh = build_box_mesh([0, 0], [1, 1], 1 / 8)
    st = solve_homogenized(_tensors(2), DimensionlessParams(Re=5.0), PROFILES["swirl"], None, mesh)
    dg = st.diagnostics
    assert abs(dg["trilinear"]) <= 1e-8 * max(dg["norm"], 1e-300) ** 3
    assert dg["div_u"] <= 1e-9
    assert abs(dg["mean_Pi"]) <= 1e-12


def test_coupled_solve_invariants():
    mesh = build_box_mesh([0, 0, 0], [1, 1, 1], 1 / 3)
    params = DimensionlessParams(Re=1.0, Rm=1.0, Al=1.0)
    # E = phi I makes the Lorentz and u x B couplings cancel in the energy balance
    st = solve_homogenized(_tensors(3, phi=0.2, m=0.2), params, PROFILES["swirl"], PROFILES["loop"], mesh)
    dg = st.diagnostics
    assert st.converged
    assert abs(dg["trilinear"]) <= 1e-8 * max(dg["norm"], 1e-300) ** 3
    assert abs(dg["mean_Pi"]) <= 1e-12
    assert dg["div_u"] <= 1e-9
    gn, hn = data_norms(mesh, PROFILES["swirl"], PROFILES["loop"])
    alpha = coercivity_constant(params, CONSTS.kappa_GR, CONSTS.kappa_K)
    assert apriori_bound(st, params, alpha, gn, hn)["pass"]


def test_picard_contraction_monotone():
    mesh = build_box_mesh([0, 0], [1, 1], 1 / 8)
    params = DimensionlessParams(Re=20.0)
    rep = check_smallness(params, PROFILES["swirl"], None, CONSTS, mesh=mesh)
    st = solve_homogenized(_tensors(2), params, PROFILES["swirl"], None, mesh, tol=1e-12)
    inc = [h["update"] for h in st.history]
    ratios = [b / a for a, b in zip(inc, inc[1:]) if a > 0]
    assert len(ratios) >= 2
    below = [r for r in ratios if r < 1]
    if rep.satisfied:
        assert all(b <= a * (1 + 1e-6) for a, b in zip(below, below[1:]))
    assert st.converged


def test_coupled_requires_3d():
    mesh = build_box_mesh([0, 0], [1, 1], 0.25)
    with pytest.raises(DimensionError):
        solve_homogenized(_tensors(2), DimensionlessParams(Al=1.0), None, None, mesh)


def test_non_elliptic_tensor_rejected():
    mesh = build_box_mesh([0, 0], [1, 1], 0.25)
    with pytest.raises(PreconditionError):
        solve_homogenized(_tensors(2, -sym_identity(2)), DimensionlessParams(), None, None, mesh)


# ------------------------------------------------------------- smallness

def test_smallness_zero_data():
    rep = check_smallness(DimensionlessParams(Al=1.0), None, None, CONSTS, g_norm=0.0, h_norm=0.0)
    assert rep.lhs == 0.0 and rep.satisfied


def test_smallness_large_Al_flips():
    small = check_smallness(DimensionlessParams(Re=1, Rm=1, Al=0.5), None, None, CONSTS, g_norm=0.01, h_norm=0.01)
    big = check_smallness(DimensionlessParams(Re=1, Rm=1, Al=500.0), None, None, CONSTS, g_norm=0.01, h_norm=0.01)
    assert small.satisfied and not big.satisfied
    assert big.rhs < small.rhs


def test_smallness_hand_evaluation():
    Re, Rm, Al, gn, hn = 2.0, 3.0, 1.5, 0.04, 0.02
    rep = check_smallness(DimensionlessParams(Re=Re, Rm=Rm, Al=Al), None, None, CONSTS, g_norm=gn, h_norm=hn)
    alpha = min(Al / Rm * 0.9, 0.5)
    assert rep.alpha == pytest.approx(0.45, rel=1e-15)
    assert rep.lhs == pytest.approx(Re * gn + Al * hn, rel=1e-15)
    assert rep.rhs == pytest.approx(alpha ** 2 / (0.25 * max(1.0, 2 * Al)), rel=1e-15)
    assert rep.satisfied == (rep.lhs <= rep.rhs)
    assert rep.functional_rhs == pytest.approx(alpha ** 2, rel=1e-15)


def test_smallness_hydro_alpha_is_korn():
    rep = check_smallness(DimensionlessParams(Re=1.0), None, None, CONSTS, g_norm=0.1, h_norm=0.0)
    assert rep.alpha == 0.5


def test_smallness_missing_constants():
    with pytest.raises(StateError):
        check_smallness(DimensionlessParams(), None, None, None, g_norm=0.0, h_norm=0.0)
    with pytest.raises(StateError):
        check_smallness(DimensionlessParams(Al=1.0), None, None, SimpleNamespace(kappa_K=0.5, kappa_S=0.2),
                        g_norm=0.0, h_norm=0.0)

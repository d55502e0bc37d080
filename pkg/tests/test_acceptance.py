"""Acceptance criteria 1-14; each test prints one PASS/FAIL line (collected in the terminal summary)."""
import time

import numpy as np
import pytest

from mrhomog.cellprob import solve_mag_cells, solve_stokes_cells
from mrhomog.cli import run
from mrhomog.efftensors import assemble_tensors, effective_viscosity, tensor_report
from mrhomog.errors import NonConvergenceError
from mrhomog.femcore.problem import DimensionlessParams
from mrhomog.fields import PROFILES
from mrhomog.finescale import (apriori_check, bogovskii_constant, bogovskii_field, calibrate_pressure_constant,
                               fine_pressure_space, solve_fine)
from mrhomog.geomesh import CellGeometry, build_box_mesh, build_cell_mesh, build_fine_mesh
from mrhomog.macroms import check_smallness, solve_homogenized
from mrhomog.tensoralg import ellipticity_report, sym_identity
from mrhomog.twoscale import (TEST_FUNCTIONS, estimate_constants, estimate_infsup, infsup_sweep, ratios_ok,
                              relative_spread)

from conftest import HYDRO_SWEEP
from mms_cases import induction_mms_errors, ns_mms_errors, tensors

DISK = CellGeometry(2, "disk", 0.25)
SPHERE = CellGeometry(3, "sphere", 0.25)


@pytest.fixture(scope="module")
def sphere_tensors():
    m = build_cell_mesh(SPHERE, 0.1)
    return assemble_tensors(solve_stokes_cells(m), solve_mag_cells(m, 2.0))


def test_c01_trivial_inclusion(verdict):
    t0 = time.perf_counter()
    t2 = assemble_tensors(solve_stokes_cells(build_cell_mesh(CellGeometry(2, "disk", 0.0), 0.125)))
    m3 = build_cell_mesh(CellGeometry(3, "sphere", 0.0), 0.25)
    t3 = assemble_tensors(solve_stokes_cells(m3), solve_mag_cells(m3, 1.0))
    secs = time.perf_counter() - t0
    dev = max(np.max(np.abs(t2.N - sym_identity(2))), np.max(np.abs(t3.N - sym_identity(3))))
    zero = bool(np.all(t3.M == 0.0) and np.all(t3.E == 0.0))
    verdict(1, dev <= 1e-10 and zero and secs < 10, f"max|N-I|={dev:.2e} M=E=0:{zero} time={secs:.1f}s")


def test_c02_symmetry_ellipticity(verdict, sphere_tensors):
    t0 = time.perf_counter()
    disk = assemble_tensors(solve_stokes_cells(build_cell_mesh(DISK, 1 / 16)))
    secs = time.perf_counter() - t0
    ok, parts = True, []
    for name, t in (("disk", disk), ("sphere", sphere_tensors)):
        rep = tensor_report(t)
        base = ellipticity_report(sym_identity(t.dim))["min_eigenvalue"]
        sym, lam = rep["N"]["major_symmetry_deviation"], rep["N"]["min_eigenvalue"]
        ok &= sym <= 1e-8 and lam > base
        parts.append(f"{name}: sym={sym:.1e} min_eig={lam:.4f}>{base:.4f}")
    for key in ("M", "E"):
        r = tensor_report(sphere_tensors)[key]
        ok &= r["symmetry_deviation"] <= 1e-8 and min(r["diagonal"]) > 0
        parts.append(f"{key}: sym={r['symmetry_deviation']:.1e} diag_min={min(r['diagonal']):.4f}")
    verdict(2, ok and secs < 600, "; ".join(parts))


def test_c03_formula_cross_check(verdict, sphere_tensors):
    dev = [effective_viscosity(solve_stokes_cells(build_cell_mesh(DISK, h)))["max_relative_deviation"]
           for h in (1 / 16, 1 / 32)]
    c = sphere_tensors.consistency
    ok = dev[1] <= 1e-6 and dev[1] <= 0.5 * dev[0] and c["E_vs_RmM"] <= 1e-9
    verdict(3, ok, f"N_flux vs N_energy deviation h=1/16: {dev[0]:.3e}, h=1/32: {dev[1]:.3e}; "
                   f"|E-Rm M|={c['E_vs_RmM']:.1e}; energy-form M deviation (reported)={c['M_energy_vs_avg']:.3f}")


def test_c04_psi_linearity(verdict):
    t0 = time.perf_counter()
    m = build_cell_mesh(SPHERE, 0.125)
    worst = 0.0
    for Rm in (1.0, 2.0, 10.0):
        mag = solve_mag_cells(m, Rm)
        ref = Rm * np.asarray(mag.theta)
        worst = max(worst, float(np.max(np.abs(np.asarray(mag.psi) - ref)) / np.max(np.abs(ref))))
    secs = time.perf_counter() - t0
    verdict(4, worst <= 1e-9 and secs < 300, f"max rel |Psi - Rm Theta| = {worst:.2e}, time={secs:.1f}s")


def test_c05_cubic_isotropy(verdict, sphere_tensors):
    M = sphere_tensors.M
    off = float(np.max(np.abs(M - np.diag(np.diag(M)))))
    spread = float(np.ptp(np.diag(M)))
    verdict(5, off <= 1e-8 and spread <= 1e-8, f"m={M[0, 0]:.6f} max|offdiag|={off:.1e} diag spread={spread:.1e}")


def test_c06_infsup_eps_independent(verdict):
    betas = infsup_sweep(DISK, (0.5, 0.25, 0.125))
    spread = relative_spread(betas.values())
    neg = estimate_infsup(build_fine_mesh([0, 0], [1, 1], DISK, 0.25, 1 / 32), drop_solid_only=False)["beta"]
    vals = ", ".join(f"{b:.4f}" for b in betas.values())
    verdict(6, spread <= 0.2 and neg < 1e-6, f"beta={vals} spread={spread:.3f}; negative control={neg:.1e}")


def test_c07_apriori_bounds(verdict, hydro_sweep):
    box = build_box_mesh([0, 0], [1, 1], 1 / 16)
    consts = type("C", (), {"kappa_K": estimate_constants(box, "kappa_K"), "kappa_GR": None})()
    params, g = HYDRO_SWEEP["params"], HYDRO_SWEEP["g"]
    states = [hydro_sweep.fines[e] for e in sorted(hydro_sweep.fines, reverse=True)]
    C = calibrate_pressure_constant(states[0], g, None)
    reps = [apriori_check(s, consts, params, g, None, pressure_constant=C) for s in states]
    ok = all(r.velocity_pass and r.pressure_pass for r in reps)
    det = "; ".join(f"|u|={r.velocity_lhs:.4f}<={r.velocity_rhs:.4f} |p|={r.pressure_lhs:.4f}<={r.pressure_rhs:.4f}"
                    for r in reps)
    verdict(7, ok, f"alpha={reps[0].alpha:.4f} C_p={C:.4f}; {det}")


def _scaled(c):
    return lambda P: c * PROFILES["swirl"](P)


def test_c08_picard_vs_smallness(verdict, hydro_sweep):
    mesh = build_box_mesh([0, 0], [1, 1], 1 / 16)
    consts = type("C", (), {"kappa_K": estimate_constants(mesh, "kappa_K"),
                            "kappa_S": estimate_constants(mesh, "kappa_S"), "kappa_GR": None})()
    params = DimensionlessParams(Re=1.0)
    unit = check_smallness(params, _scaled(1.0), None, consts, mesh=mesh)
    c_ok = 0.5 * unit.rhs / unit.lhs
    small = check_smallness(params, _scaled(c_ok), None, consts, mesh=mesh)
    st = solve_homogenized(hydro_sweep.tensors, params, _scaled(c_ok), None, mesh, tol=1e-9, maxit=30,
                           smallness=small)
    ratios = [h["ratio"] for h in st.history if h["ratio"] is not None]
    good = small.satisfied and st.converged and st.iterations <= 30 and all(r < 1 for r in ratios)
    big = check_smallness(params, _scaled(100 * unit.rhs / unit.lhs), None, consts, mesh=mesh)
    try:
        solve_homogenized(hydro_sweep.tensors, params, _scaled(100 * unit.rhs / unit.lhs), None, mesh,
                          tol=1e-9, maxit=30, smallness=big)
        diag, outcome = True, "converged"
    except NonConvergenceError as exc:
        diag = bool(exc.history) and exc.report is not None and exc.report.get("smallness") is not None
        outcome = f"non-convergence report with {len(exc.history)} iterates"
    verdict(8, good and diag and not big.satisfied,
            f"small data: {st.iterations} iterations, max ratio={max(ratios, default=0):.2e}; "
            f"100x data (lhs/rhs={big.lhs / big.rhs:.0f}): {outcome}")


def test_c09_two_scale_convergence(verdict, hydro_sweep):
    rows = hydro_sweep.rows
    gaps = [r["u_L2_gap"] for r in rows]
    ok = ratios_ok(gaps, 0.8)
    ind_ok = [ratios_ok([r["indicator_gaps"][k] for r in rows], 0.8) for k in range(len(TEST_FUNCTIONS))]
    rat = [f"{r:.3f}" for r in (b / a for a, b in zip(gaps, gaps[1:]))]
    verdict(9, ok and all(ind_ok) and len(ind_ok) == 5,
            f"|u_eps-u0|_L2={', '.join(f'{g:.3e}' for g in gaps)} ratios={rat}; indicator decay ok={ind_ok}")


def test_c10_corrector(verdict, hydro_sweep):
    c = [r["corrector_gap"] for r in hydro_sweep.rows]
    ok = len(c) >= 3 and all(b < a for a, b in zip(c, c[1:]))
    verdict(10, ok, "corrector error=" + ", ".join(f"{v:.4e}" for v in c))


def test_c11_manufactured(verdict):
    hs, e = ns_mms_errors((0.1, 0.05, 0.025, 0.0125))
    hb, eb = induction_mms_errors((1 / 4, 1 / 6, 1 / 8, 1 / 10))
    ns = [np.log(a / b) / np.log(x / y) for a, b, x, y in zip(e, e[1:], hs, hs[1:])]
    ind = [np.log(a / b) / np.log(x / y) for a, b, x, y in zip(eb, eb[1:], hb, hb[1:])]
    verdict(11, min(ns) >= 2.5 and min(ind) >= 1.5,
            f"NS L2 orders={[round(float(o), 3) for o in ns]}; induction H1 orders={[round(float(o), 3) for o in ind]}")


def _admissible_pressure(mesh, seed):
    Q = fine_pressure_space(mesh)[0]
    touched = np.zeros(Q.n_nodes, bool)
    touched[np.unique(Q.cell_nodes[mesh.fluid_mask()])] = True
    from mrhomog.femcore.forms import mass_form
    mean = np.asarray(mass_form(Q).sum(axis=1)).ravel()
    p = np.where(touched, np.random.default_rng(seed).normal(size=Q.ndofs), 0.0)
    s = touched.astype(float)
    return p - (mean @ p) / (mean @ s) * s


def test_c12_bogovskii(verdict):
    res, C = [], []
    for k, eps in enumerate((0.5, 0.25, 0.125)):
        mesh = build_fine_mesh([0, 0], [1, 1], DISK, eps, eps / 8)
        res.append(bogovskii_field(_admissible_pressure(mesh, k), mesh))
        C.append(bogovskii_constant(mesh))
    div = max(r.div_residual for r in res)
    defect = max(r.constant_defect for r in res)
    spread = relative_spread(C)
    verdict(12, div <= 1e-8 and defect <= 1e-12 and spread <= 0.2,
            f"div residual={div:.1e} rigid defect={defect:.1e} C_bog={', '.join(f'{c:.3f}' for c in C)} "
            f"spread={spread:.3f}")


def test_c13_trilinear_antisymmetry(verdict, hydro_sweep):
    vals = []
    for st in hydro_sweep.fines.values():
        vals.append(abs(st.diagnostics["trilinear"]) / st.diagnostics["trilinear_scale"])
    dg = hydro_sweep.macro.diagnostics
    vals.append(abs(dg["trilinear"]) / dg["norm"] ** 3)
    p3 = DimensionlessParams(Re=1.0, Rm=1.0, Al=1.0)
    mac = solve_homogenized(tensors(3, phi=0.2, m=0.2), p3, PROFILES["swirl"], PROFILES["loop"],
                            build_box_mesh([0, 0, 0], [1, 1, 1], 1 / 3))
    vals.append(abs(mac.diagnostics["trilinear"]) / mac.diagnostics["norm"] ** 3)
    fine = solve_fine(build_fine_mesh([0, 0, 0], [1, 1, 1], SPHERE, 1.0, 0.125), p3, "swirl", "loop",
                      mode="coupled3d")
    vals.append(abs(fine.diagnostics["trilinear"]) / fine.diagnostics["trilinear_scale"])
    verdict(13, max(vals) <= 1e-8, f"{len(vals)} converged states, max |C(s;s,s)|/scale={max(vals):.1e}")


CLI_CONFIG = f"""\
[cell]
dim = 2
shape = disk
radius = {HYDRO_SWEEP['radius']}
h = {HYDRO_SWEEP['cell_h']}

[physics]
Re = {HYDRO_SWEEP['params'].Re}
Al = 0
g = {HYDRO_SWEEP['g']}

[macro]
h = 1/32

[fine]
epsilon_list = 1/4, 1/8, 1/16

[output]
formats = csv
"""


def test_c14_determinism(verdict, tmp_path):
    cfg = tmp_path / "sweep.ini"
    cfg.write_text(CLI_CONFIG)
    outs = [tmp_path / "run1", tmp_path / "run2"]
    codes = [run(["converge", "--config", str(cfg), "--out", str(o), "--deterministic"]) for o in outs]
    names = sorted(p.name for p in outs[0].glob("*.csv"))
    same = all((outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names)
    verdict(14, codes == [0, 0] and "convergence.csv" in names and same,
            f"exit codes={codes}; {len(names)} CSV files byte-identical: {same}")
